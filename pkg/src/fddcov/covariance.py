"""Spatial covariance matrices: angular synthesis, estimation and the
block structure of cross-polarized planar arrays.

A covariance matrix of a cross-polarized UPA, with antennas stacked
polarization-major (see geometry module), decomposes into macro-blocks

    R = [[B1, B2^H],
         [B2, B3 ]],

where every macro-block is Hermitian and block-Toeplitz down its vertical
block index, the block on the macro-diagonal of each macro-block is
Hermitian Toeplitz, and every off-diagonal sub-block has identical diagonal
entries.  Matrices with this structure are parameterized by

    M = 6 * (N_H + (N_V - 1) * (N_H**2 - N_H + 1))

real numbers.  ``upa_average`` is the orthogonal projection onto this
linear subspace (averaging all entries the structure forces to be equal),
``structured_vectorize``/``structured_devectorize`` encode and decode the
M-dimensional parameterization losslessly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import AngularGrid, UpaGeometry, array_response_grid, grids_equal


class StructureViolation(ValueError):
    """Input matrix is farther from the UPA block structure than tolerated."""


@dataclass
class PolarizedAps:
    """Vertical and horizontal angular power spectra sampled on a grid."""

    rho_v: np.ndarray
    rho_h: np.ndarray
    grid: AngularGrid

    def __post_init__(self):
        q = self.grid.size
        if self.rho_v.shape != (q,) or self.rho_h.shape != (q,):
            raise ValueError("spectrum length does not match the grid")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.rho_v, self.rho_h])

    @classmethod
    def from_stacked(cls, x: np.ndarray, grid: AngularGrid) -> "PolarizedAps":
        q = grid.size
        return cls(x[:q].copy(), x[q:].copy(), grid)


# ---------------------------------------------------------------------------
# analytic covariance and estimation


def covariance_from_aps(aps: PolarizedAps, geom: UpaGeometry, carrier_hz: float,
                        grid: AngularGrid, steering=None) -> np.ndarray:
    """Covariance as the quadrature of the two spectra against the
    dual-polarized steering outer products.

    ``steering`` optionally passes precomputed (A_V, A_H) matrices from
    ``array_response_grid`` to avoid recomputing them per call.
    """
    if not grids_equal(aps.grid, grid):
        raise ValueError("spectrum grid does not match the requested grid")
    if steering is None:
        a_v, a_h = array_response_grid(geom, carrier_hz, grid.azimuth, grid.zenith)
    else:
        a_v, a_h = steering
    wv = grid.weights * aps.rho_v
    wh = grid.weights * aps.rho_h
    r = (a_v * wv) @ a_v.conj().T + (a_h * wh) @ a_h.conj().T
    return 0.5 * (r + r.conj().T)


def sample_covariance(snapshots) -> np.ndarray:
    """(1/n) sum of outer products of the snapshot vectors; exactly Hermitian."""
    h = np.asarray(snapshots)
    if h.ndim == 1:
        h = h[None, :]
    if h.shape[0] == 0:
        raise ValueError("at least one snapshot is required")
    r = h.T @ h.conj() / h.shape[0]
    return 0.5 * (r + r.conj().T)


def psd_projection(matrix: np.ndarray) -> np.ndarray:
    """Nearest positive semidefinite matrix in Frobenius norm."""
    m = np.asarray(matrix)
    scale = np.linalg.norm(m, "fro")
    if scale > 0 and np.linalg.norm(m - m.conj().T, "fro") > 1e-10 * scale:
        raise ValueError("input must be Hermitian")
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = np.maximum(w, 0.0)
    r = (v * w) @ v.conj().T
    return 0.5 * (r + r.conj().T)


# ---------------------------------------------------------------------------
# UPA block structure

@dataclass
class UpaStructure:
    """Entry-to-parameter maps of the UPA covariance block structure.

    ``class_index[e]`` is the parameter class of flat entry e (row-major),
    ``conj_sign[e]`` is +1 if the entry stores the class value and -1 if it
    stores its conjugate, ``rep_index[c]`` is the first entry of class c in
    scan order.
    """

    n_vertical: int
    n_horizontal: int
    n_antennas: int
    class_index: np.ndarray
    conj_sign: np.ndarray
    counts: np.ndarray
    rep_index: np.ndarray
    order: np.ndarray
    segment_starts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.size

    @property
    def n_parameters(self) -> int:
        return 2 * self.counts.size


def structured_length(geom: UpaGeometry) -> int:
    """Number of real parameters of the structured covariance of ``geom``."""
    nv, nh = geom.n_vertical, geom.n_horizontal
    return 6 * (nh + (nv - 1) * (nh * nh - nh + 1))


@lru_cache(maxsize=16)
def _structure_cached(n_vertical: int, n_horizontal: int) -> UpaStructure:
    nv, nh = n_vertical, n_horizontal
    p = nv * nh
    n = 2 * p
    per_macro = nh + (nv - 1) * (nh * nh - nh + 1)

    def class_id(l, du, v, vp):
        base = l * per_macro
        if du == 0:
            return base + (v - vp)  # Toeplitz offset of the diagonal block
        block = base + nh + (du - 1) * (nh * nh - nh + 1)
        if v == vp:
            return block  # shared diagonal of an off-diagonal block
        return block + 1 + v * (nh - 1) + (vp if vp < v else vp - 1)

    cls = np.empty(n * n, dtype=np.int64)
    sign = np.empty(n * n, dtype=np.float64)
    for i in range(n):
        ki, ri = divmod(i, p)
        ui, vi = divmod(ri, nh)
        for j in range(n):
            kj, rj = divmod(j, p)
            uj, vj = divmod(rj, nh)
            s = 1.0
            if (ki, kj) == (0, 0):
                l, row, col = 0, (ui, vi), (uj, vj)
            elif (ki, kj) == (1, 1):
                l, row, col = 2, (ui, vi), (uj, vj)
            elif (ki, kj) == (1, 0):
                l, row, col = 1, (ui, vi), (uj, vj)
            else:  # upper-right macro-block stores the conjugate of B2
                l, row, col, s = 1, (uj, vj), (ui, vi), -1.0
            du = row[0] - col[0]
            if du < 0:
                row, col, du, s = col, row, -du, -s
            if du == 0:
                dv = row[1] - col[1]
                if dv < 0:
                    dv, s = -dv, -s
                c = class_id(l, 0, dv, 0)
            else:
                c = class_id(l, du, row[1], col[1])
            cls[i * n + j] = c
            sign[i * n + j] = s

    n_classes = 3 * per_macro
    counts = np.bincount(cls, minlength=n_classes).astype(np.float64)
    rep = np.full(n_classes, -1, dtype=np.int64)
    for e in range(n * n - 1, -1, -1):
        rep[cls[e]] = e
    order = np.argsort(cls, kind="stable")
    boundaries = np.flatnonzero(np.diff(cls[order])) + 1
    starts = np.concatenate([[0], boundaries])
    return UpaStructure(nv, nh, n, cls, sign, counts, rep, order, starts)


def upa_structure(geom: UpaGeometry) -> UpaStructure:
    if len(geom.slants) != 2:
        raise ValueError("block structure requires a cross-polarized pair per position")
    return _structure_cached(geom.n_vertical, geom.n_horizontal)


def _class_means(st: UpaStructure, flat: np.ndarray) -> np.ndarray:
    """Mean class values of one or more flattened matrices, shape (C,) or (C, m)."""
    if flat.ndim == 2:
        adj = flat.real + 1j * (st.conj_sign[:, None] * flat.imag)
        return np.add.reduceat(adj[st.order], st.segment_starts, axis=0) / st.counts[:, None]
    adj = flat.real + 1j * (st.conj_sign * flat.imag)
    return np.add.reduceat(adj[st.order], st.segment_starts) / st.counts


def upa_average(matrix: np.ndarray, geom: UpaGeometry) -> np.ndarray:
    """Average all entries the block structure forces to be identical.

    This is the orthogonal projection (in the real-vectorization inner
    product) onto the structured subspace; it is idempotent and can only
    move an estimate closer to any structured matrix.
    """
    st = upa_structure(geom)
    n = st.n_antennas
    m = np.asarray(matrix)
    if m.shape != (n, n):
        raise ValueError(f"matrix shape {m.shape} does not match geometry ({n} antennas)")
    h = 0.5 * (m + m.conj().T)
    means = _class_means(st, h.ravel())
    out = means.real[st.class_index] + 1j * st.conj_sign * means.imag[st.class_index]
    return out.reshape(n, n)


def structured_vectorize(matrix: np.ndarray, geom: UpaGeometry,
                         tol: float = 1e-6) -> np.ndarray:
    """Encode a structured covariance into its M real parameters.

    The layout, per macro-block (B1, B2, B3 in that order): first the N_H
    complex first-row entries of the Hermitian Toeplitz diagonal block (by
    increasing offset), then per vertical block offset 1..N_V-1 the shared
    diagonal value followed by the off-diagonal entries in row-major order.
    Each complex value is stored as an (Re, Im) pair.

    Raises StructureViolation if the input deviates from the structure by
    more than ``tol`` times its Frobenius norm.
    """
    st = upa_structure(geom)
    n = st.n_antennas
    m = np.asarray(matrix)
    if m.shape != (n, n):
        raise ValueError(f"matrix shape {m.shape} does not match geometry ({n} antennas)")
    scale = np.linalg.norm(m, "fro")
    if scale > 0:
        violation = float(np.max(np.abs(m - upa_average(m, geom))))
        if violation > tol * scale:
            raise StructureViolation(
                f"max structure violation {violation:.3e} exceeds "
                f"{tol:.1e} * ||R||_F = {tol * scale:.3e}"
            )
    flat = m.ravel()
    rep = flat[st.rep_index]
    values = rep.real + 1j * st.conj_sign[st.rep_index] * rep.imag
    out = np.empty(st.n_parameters)
    out[0::2] = values.real
    out[1::2] = values.imag
    return out


def structured_devectorize(vector: np.ndarray, geom: UpaGeometry) -> np.ndarray:
    """Inverse of structured_vectorize; exact for any parameter vector."""
    st = upa_structure(geom)
    v = np.asarray(vector, dtype=float)
    if v.shape != (st.n_parameters,):
        raise ValueError(f"expected {st.n_parameters} parameters, got {v.shape}")
    re = v[0::2]
    im = v[1::2]
    flat = re[st.class_index] + 1j * st.conj_sign * im[st.class_index]
    return flat.reshape(st.n_antennas, st.n_antennas)


# ---------------------------------------------------------------------------
# full real vectorization


def full_vectorize(matrix: np.ndarray) -> np.ndarray:
    """Column-stacked real part followed by column-stacked imaginary part.

    The real dot product of two such vectors equals Re tr(R1^H R2), so
    Euclidean least squares in this representation matches the natural
    matrix inner product.
    """
    m = np.asarray(matrix)
    return np.concatenate([m.real.ravel(order="F"), m.imag.ravel(order="F")])


def full_devectorize(vector: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(vector, dtype=float)
    if v.shape != (2 * n * n,):
        raise ValueError(f"expected {2 * n * n} entries, got {v.shape}")
    re = v[: n * n].reshape(n, n, order="F")
    im = v[n * n:].reshape(n, n, order="F")
    return re + 1j * im


# ---------------------------------------------------------------------------
# covariance file formats

_TEXT_MAGIC = "FCOV-TEXT"
_BIN_MAGIC = b"FCOV1"


def write_covariance_text(path, matrix: np.ndarray):
    """Text format: header 'FCOV-TEXT N', then N*N lines 'i j re im'
    (zero-based row-major indices, 17 significant digits)."""
    m = np.asarray(matrix)
    n = m.shape[0]
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{_TEXT_MAGIC} {n}\n")
        for i in range(n):
            for j in range(n):
                f.write(f"{i} {j} {m[i, j].real:.17g} {m[i, j].imag:.17g}\n")


def read_covariance_text(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2 or header[0] != _TEXT_MAGIC:
            raise ValueError(f"{path}: not a {_TEXT_MAGIC} file")
        n = int(header[1])
        m = np.zeros((n, n), dtype=complex)
        for line in f:
            parts = line.split()
            if not parts:
                continue
            i, j = int(parts[0]), int(parts[1])
            m[i, j] = float(parts[2]) + 1j * float(parts[3])
    return m


def write_covariance_binary(path, matrix: np.ndarray):
    """Binary format: magic 'FCOV1', little-endian u32 N, then 2*N*N
    little-endian float64 in full-vectorization order."""
    m = np.asarray(matrix)
    n = m.shape[0]
    with open(path, "wb") as f:
        f.write(_BIN_MAGIC)
        f.write(struct.pack("<I", n))
        f.write(full_vectorize(m).astype("<f8").tobytes())


def read_covariance_binary(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(len(_BIN_MAGIC))
        if magic != _BIN_MAGIC:
            raise ValueError(f"{path}: not a FCOV1 file")
        (n,) = struct.unpack("<I", f.read(4))
        data = np.frombuffer(f.read(16 * n * n), dtype="<f8")
    if data.size != 2 * n * n:
        raise ValueError(f"{path}: truncated covariance payload")
    return full_devectorize(data.astype(float), n)


def read_covariance(path) -> np.ndarray:
    """Dispatch on the file magic."""
    with open(path, "rb") as f:
        head = f.read(len(_BIN_MAGIC))
    if head == _BIN_MAGIC:
        return read_covariance_binary(path)
    return read_covariance_text(path)
