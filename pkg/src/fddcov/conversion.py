"""Uplink-to-downlink covariance conversion via angular-spectrum recovery.

The uplink covariance constraints form a system of hyperplanes in the space
of gridded spectrum pairs, with the inner product

    <(f_V, f_H), (g_V, g_H)> = sum_q w_q (f_V[q] g_V[q] + f_H[q] g_H[q]).

``algorithm1`` projects the origin onto the affine intersection of those
hyperplanes (the minimum-norm spectrum consistent with the uplink
covariance) and reads the downlink covariance back out; it collapses to a
single precomputable matrix F with r_d = F r_u.  ``algorithm2_eapm``
additionally enforces nonnegativity of the spectra by extrapolated
alternating projections between the affine variety and the nonnegative
cone, which costs iterations but respects the physics of power spectra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import (
    PolarizedAps,
    _class_means,
    full_devectorize,
    full_vectorize,
    psd_projection,
    structured_devectorize,
    structured_length,
    structured_vectorize,
    upa_average,
    upa_structure,
)
from .geometry import AngularGrid, UpaGeometry, array_response_grid, grids_equal

_KERNEL_CHUNK = 512
DEFAULT_TRUNCATION = 1e-8


@dataclass
class KernelOperator:
    """Linear map from a gridded spectrum pair to a covariance vectorization.

    ``matrix`` is (M, 2Q); the first Q columns weight the vertical spectrum,
    the last Q the horizontal one, and the quadrature weights are folded in,
    so ``matrix @ aps.stacked()`` equals the vectorized covariance of the
    spectra up to quadrature accuracy (exactly, on the shared grid).
    """

    matrix: np.ndarray
    carrier_hz: float
    grid: AngularGrid
    mode: str  # "structured" or "full"
    geometry: UpaGeometry
    _svd: tuple = field(default=None, repr=False, compare=False)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    def apply(self, aps: PolarizedAps) -> np.ndarray:
        if not grids_equal(aps.grid, self.grid):
            raise ValueError("spectrum grid does not match the kernel grid")
        return self.matrix @ aps.stacked()

    def svd(self, truncation: float = DEFAULT_TRUNCATION):
        """Truncated SVD of the weight-whitened kernel, cached.

        Returns (u, s, x_basis) with x_basis the kept right singular vectors
        mapped back to spectrum coordinates, so that the minimum-norm
        solution of ``matrix @ x = r`` under the weighted inner product is
        ``x_basis @ (u.T @ r / s)``.
        """
        if self._svd is None or self._svd[0] != truncation:
            w2 = np.concatenate([self.grid.weights, self.grid.weights])
            inv_sqrt = 1.0 / np.sqrt(w2)
            u, s, vt = np.linalg.svd(self.matrix * inv_sqrt, full_matrices=False)
            keep = s > truncation * s[0] if s.size else slice(0)
            u, s, vt = u[:, keep], s[keep], vt[keep]
            self._svd = (truncation, u, s, vt.T * inv_sqrt[:, None])
        return self._svd[1], self._svd[2], self._svd[3]


@dataclass
class ConversionOperator:
    """Precomputed uplink-to-downlink map on covariance vectorizations."""

    matrix: np.ndarray
    provenance: dict

    def apply(self, r_u: np.ndarray) -> np.ndarray:
        return self.matrix @ r_u


@dataclass
class EapmParams:
    max_iterations: int = 100
    residual_tolerance: float = 1e-4
    extrapolation_enabled: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.residual_tolerance <= 0:
            raise ValueError("residual_tolerance must be positive")


@dataclass
class EapmResult:
    aps: PolarizedAps
    r_d: np.ndarray
    iterations: int
    residual: float
    converged: bool
    residual_history: np.ndarray
    gap_history: np.ndarray


def build_kernel(geom: UpaGeometry, carrier_hz: float, grid: AngularGrid,
                 mode: str = "structured", steering=None) -> KernelOperator:
    """Assemble the kernel matrix for one carrier frequency.

    Column q (and Q+q) is the weighted vectorization of the steering outer
    product a(theta_q) a(theta_q)^H for the vertical (horizontal)
    polarization.  Structured mode routes the outer products through the
    block-structure averaging, i.e. it is the full system pre-multiplied by
    the averaging map.
    """
    if mode not in ("structured", "full"):
        raise ValueError(f"unknown kernel mode {mode!r}")
    if steering is None:
        a_v, a_h = array_response_grid(geom, carrier_hz, grid.azimuth, grid.zenith)
    else:
        a_v, a_h = steering
    n = geom.n_antennas
    q = grid.size
    if mode == "structured":
        st = upa_structure(geom)
        m_rows = st.n_parameters
    else:
        m_rows = 2 * n * n
    matrix = np.empty((m_rows, 2 * q))
    for block, a in ((0, a_v), (1, a_h)):
        for start in range(0, q, _KERNEL_CHUNK):
            stop = min(start + _KERNEL_CHUNK, q)
            cols = a[:, start:stop]
            outers = cols[:, None, :] * cols.conj()[None, :, :]  # (N, N, chunk)
            if mode == "structured":
                means = _class_means(st, outers.reshape(n * n, stop - start))
                vec = np.empty((m_rows, stop - start))
                vec[0::2] = means.real
                vec[1::2] = means.imag
            else:
                flat = outers.transpose(1, 0, 2).reshape(n * n, stop - start)
                vec = np.concatenate([flat.real, flat.imag], axis=0)
            matrix[:, block * q + start: block * q + stop] = vec * grid.weights[start:stop]
    return KernelOperator(matrix, carrier_hz, grid, mode, geom)


def vectorize_for_mode(matrix: np.ndarray, kernel: KernelOperator) -> np.ndarray:
    if kernel.mode == "structured":
        return structured_vectorize(upa_average(matrix, kernel.geometry), kernel.geometry)
    return full_vectorize(matrix)


def devectorize_for_mode(vector: np.ndarray, kernel: KernelOperator) -> np.ndarray:
    if kernel.mode == "structured":
        return structured_devectorize(vector, kernel.geometry)
    return full_devectorize(vector, kernel.geometry.n_antennas)


def project_onto_variety(kernel: KernelOperator, r: np.ndarray,
                         from_aps: PolarizedAps = None,
                         truncation: float = DEFAULT_TRUNCATION) -> PolarizedAps:
    """Nearest point, in the weighted inner product, of {x : kernel x = r}.

    With ``from_aps`` None the origin is projected, giving the minimum-norm
    solution.  A rank-deficient or inconsistent system yields the
    least-squares point; callers can measure the leftover residual with
    ``variety_residual``.
    """
    u, s, x_basis = kernel.svd(truncation)
    if from_aps is None:
        x0 = np.zeros(kernel.matrix.shape[1])
        rho = r
    else:
        x0 = from_aps.stacked()
        rho = r - kernel.matrix @ x0
    x = x0 + x_basis @ (u.T @ rho / s)
    return PolarizedAps.from_stacked(x, kernel.grid)


def variety_residual(kernel: KernelOperator, aps: PolarizedAps, r: np.ndarray) -> float:
    """Relative residual of the covariance constraints at ``aps``."""
    scale = np.linalg.norm(r)
    if scale == 0.0:
        return float(np.linalg.norm(kernel.apply(aps)))
    return float(np.linalg.norm(kernel.apply(aps) - r) / scale)


def project_onto_cone(aps: PolarizedAps) -> PolarizedAps:
    """Metric projection onto the nonnegative cone: entrywise clipping."""
    return PolarizedAps(np.maximum(aps.rho_v, 0.0), np.maximum(aps.rho_h, 0.0), aps.grid)


def _check_kernel_pair(kernel_u: KernelOperator, kernel_d: KernelOperator):
    if kernel_u.mode != kernel_d.mode:
        raise ValueError("kernel pair must share the vectorization mode")
    if not grids_equal(kernel_u.grid, kernel_d.grid):
        raise ValueError("kernel pair must share the grid")


def algorithm1(kernel_u: KernelOperator, kernel_d: KernelOperator, r_u: np.ndarray,
               truncation: float = DEFAULT_TRUNCATION):
    """Minimum-norm spectrum consistent with the uplink constraints, and the
    downlink vectorization it implies."""
    _check_kernel_pair(kernel_u, kernel_d)
    aps = project_onto_variety(kernel_u, r_u, truncation=truncation)
    return aps, kernel_d.apply(aps)


def build_conversion_operator(kernel_u: KernelOperator, kernel_d: KernelOperator,
                              truncation: float = DEFAULT_TRUNCATION) -> ConversionOperator:
    """Collapse algorithm1 into the single matrix F with r_d = F r_u."""
    _check_kernel_pair(kernel_u, kernel_d)
    u, s, x_basis = kernel_u.svd(truncation)
    f = ((kernel_d.matrix @ x_basis) / s) @ u.T
    provenance = {
        "geometry_hash": geometry_hash(kernel_u.geometry),
        "ul_hz": f"{kernel_u.carrier_hz:.17g}",
        "dl_hz": f"{kernel_d.carrier_hz:.17g}",
        "grid": f"{kernel_u.grid.n_azimuth}x{kernel_u.grid.n_zenith}",
        "mode": kernel_u.mode,
        "truncation": f"{truncation:.17g}",
    }
    return ConversionOperator(f, provenance)


def algorithm2_eapm(kernel_u: KernelOperator, kernel_d: KernelOperator, r_u: np.ndarray,
                    params: EapmParams = None,
                    truncation: float = DEFAULT_TRUNCATION) -> EapmResult:
    """Alternating projections between the uplink variety and the
    nonnegative cone, warm-started from the algorithm1 spectrum.

    The iteration is x <- x + nu * (P_V(P_Z(x)) - x) with nu the Pierra
    extrapolation coefficient ||P_Z(x) - x||^2 / ||P_V(P_Z(x)) - x||^2
    clamped to [1, 100] (nu = 1 when extrapolation is disabled, recovering
    plain alternating projections).  Stops when the relative uplink
    residual of the clipped iterate drops below the tolerance.  Always
    returns the clipped (hence nonnegative) final iterate; non-convergence
    is reported through the ``converged`` flag, not an exception.
    """
    _check_kernel_pair(kernel_u, kernel_d)
    if params is None:
        params = EapmParams()
    u, s, x_basis = kernel_u.svd(truncation)
    w2 = np.concatenate([kernel_u.grid.weights, kernel_u.grid.weights])
    r_norm = float(np.linalg.norm(r_u))
    scale = r_norm if r_norm > 0 else 1.0

    aps0 = project_onto_variety(kernel_u, r_u, truncation=truncation)
    x = aps0.stacked()
    residuals = []
    gaps = []
    converged = False
    iterations = 0
    for _ in range(params.max_iterations):
        y = np.maximum(x, 0.0)
        rho = r_u - kernel_u.matrix @ y
        phi = float(np.linalg.norm(rho)) / scale
        residuals.append(phi)
        if phi <= params.residual_tolerance:
            converged = True
            break
        iterations += 1
        step = x_basis @ (u.T @ rho / s)  # P_V(y) - y
        gaps.append(math.sqrt(float(np.sum(w2 * step ** 2))) / scale)
        v = y + step
        if params.extrapolation_enabled:
            dz = float(np.sum(w2 * (y - x) ** 2))
            dv = float(np.sum(w2 * (v - x) ** 2))
            if dv == 0.0:
                x = v
                converged = True
                break
            nu = min(max(dz / dv, 1.0), 100.0)
        else:
            nu = 1.0
        x = x + nu * (v - x)

    aps = PolarizedAps.from_stacked(np.maximum(x, 0.0), kernel_u.grid)
    final_residual = variety_residual(kernel_u, aps, r_u)
    if final_residual <= params.residual_tolerance:
        converged = True
    return EapmResult(aps, kernel_d.apply(aps), iterations, final_residual,
                      converged, np.array(residuals), np.array(gaps))


def convert(r_u_matrix: np.ndarray, kernels, method: str = "alg1",
            eapm_params: EapmParams = None,
            truncation: float = DEFAULT_TRUNCATION) -> np.ndarray:
    """Full conversion pipeline from an uplink covariance estimate.

    ``kernels`` is either a (kernel_u, kernel_d) pair, or a precomputed
    ConversionOperator together with the kernel pair it was built from
    for the devectorization metadata.  Steps: block-structure averaging,
    vectorization, spectrum recovery (or the direct operator), downlink
    readout, PSD projection.
    """
    if isinstance(kernels, ConversionOperator):
        raise ValueError("a ConversionOperator alone lacks grid metadata; "
                         "pass (kernel_u, kernel_d) or (operator, kernel_u, kernel_d)")
    if len(kernels) == 3:
        operator, kernel_u, kernel_d = kernels
    else:
        operator = None
        kernel_u, kernel_d = kernels
    _check_kernel_pair(kernel_u, kernel_d)

    geom = kernel_u.geometry
    averaged = upa_average(r_u_matrix, geom) if len(geom.slants) == 2 else np.asarray(r_u_matrix)
    if kernel_u.mode == "structured":
        r_u = structured_vectorize(averaged, geom)
    else:
        r_u = full_vectorize(averaged)
    if method == "alg1":
        if operator is not None:
            r_d = operator.apply(r_u)
        else:
            _, r_d = algorithm1(kernel_u, kernel_d, r_u, truncation)
    elif method == "alg2":
        r_d = algorithm2_eapm(kernel_u, kernel_d, r_u, eapm_params, truncation).r_d
    else:
        raise ValueError(f"unknown conversion method {method!r}")
    return psd_projection(devectorize_for_mode(r_d, kernel_d))


# ---------------------------------------------------------------------------
# operator cache file format

_OP_MAGIC = b"FCNV1"


def geometry_hash(geom: UpaGeometry) -> str:
    import hashlib

    pattern = geom.element_pattern
    desc = "|".join([
        f"{geom.n_vertical}", f"{geom.n_horizontal}", f"{geom.spacing:.17g}",
        ",".join(f"{s:.17g}" for s in geom.slants),
        f"{pattern.gain_dbi:.17g}", f"{pattern.bw_vertical_deg:.17g}",
        f"{pattern.bw_horizontal_deg:.17g}", f"{pattern.sidelobe_floor_db:.17g}",
        f"{pattern.front_back_floor_db:.17g}",
    ])
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


def save_operator(path, operator: ConversionOperator):
    """Cache format: magic FCNV1, little-endian u32 M_d and M_u, row-major
    float64 matrix, then UTF-8 'key=value' provenance lines."""
    import struct

    m_d, m_u = operator.matrix.shape
    with open(path, "wb") as f:
        f.write(_OP_MAGIC)
        f.write(struct.pack("<II", m_d, m_u))
        f.write(np.ascontiguousarray(operator.matrix, dtype="<f8").tobytes())
        footer = "".join(f"{k}={v}\n" for k, v in sorted(operator.provenance.items()))
        f.write(footer.encode("utf-8"))


def load_operator(path) -> ConversionOperator:
    import struct

    with open(path, "rb") as f:
        magic = f.read(len(_OP_MAGIC))
        if magic != _OP_MAGIC:
            raise ValueError(f"{path}: not a FCNV1 operator file")
        m_d, m_u = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(8 * m_d * m_u), dtype="<f8")
        if data.size != m_d * m_u:
            raise ValueError(f"{path}: truncated operator payload")
        footer = f.read().decode("utf-8")
    provenance = {}
    for line in footer.splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            provenance[key] = value
    return ConversionOperator(data.reshape(m_d, m_u).astype(float), provenance)


def vectorization_counts(geom: UpaGeometry) -> dict:
    """Parameter counts of the available vectorizations, for diagnostics.

    ``full_alt`` is the commonly quoted per-polarization-block count
    2*(N_V*N_H)^2; ``full`` counts the whole matrix.
    """
    n = geom.n_antennas
    p = geom.n_positions
    return {"structured": structured_length(geom), "full": 2 * n * n,
            "full_alt": 2 * p * p}
