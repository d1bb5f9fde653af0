"""Clustered multipath channel: random parameter drawing, narrow-band and
OFDM channel synthesis, and the matching ground-truth angular power spectra.

Per coherence block the channel is a sum over clusters of subpath
contributions

    h = sum_c sqrt(alpha_c / N_p) sum_i A(theta_ic) M_ic B(phi_ic)^H,

with A the dual-polarized array response at the BS-side angle, B the
terminal pattern at the UE-side angle and M_ic the 2x2 random polarization
mixing matrix (unit co-polarized entries, 1/sqrt(XPR) cross terms, i.i.d.
uniform phases).  Subpath angles are Gaussian around per-cluster means and
are redrawn each coherence block; cluster powers, means and spreads stay
fixed for the stationarity window that one simulation trial represents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import PolarizedAps
from .geometry import (
    AngularGrid,
    UePatternConfig,
    UpaGeometry,
    steering_phases,
    _element_field_grid,
    ue_response_grid,
)

DEG = math.pi / 180.0

# snapshots processed per synthesis block; fixed so that RNG consumption and
# floating-point evaluation order never depend on the execution environment
_CHUNK = 256


@dataclass
class ClusterParams:
    power: float
    dod_mean: tuple  # (azimuth, zenith) at the BS
    dod_spread: tuple
    doa_mean: tuple  # (azimuth, zenith) at the UE
    doa_spread: tuple
    delay_tap: int = 0

    def __post_init__(self):
        if self.power <= 0:
            raise ValueError("cluster power must be positive")
        if min(self.dod_spread) <= 0 or min(self.doa_spread) <= 0:
            raise ValueError("angular spreads must be positive")


@dataclass
class ScenarioDraw:
    clusters: list
    n_subpaths: int
    xpr_lognormal: tuple  # (mu, sigma) in dB
    ue_rotation: tuple

    def __post_init__(self):
        if not self.clusters:
            raise ValueError("at least one cluster is required")
        if self.n_subpaths < 1:
            raise ValueError("at least one subpath per cluster is required")
        total = sum(c.power for c in self.clusters)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"cluster powers sum to {total}, expected 1")

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


@dataclass
class SubpathRealization:
    """Batched per-subpath draws; arrays are (n_draws, n_clusters*n_subpaths).

    UL and DL share directions and cross-polarization ratios; only the
    phase tuples (ordered VV, VH, HV, HH) are drawn independently.
    """

    dod_azimuth: np.ndarray
    dod_zenith: np.ndarray
    doa_azimuth: np.ndarray
    doa_zenith: np.ndarray
    xpr: np.ndarray
    phases_ul: np.ndarray  # (n_draws, paths, 4)
    phases_dl: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.dod_azimuth.shape[0]


@dataclass(frozen=True)
class WidebandConfig:
    n_subcarriers: int = 64
    impulse_length: int = 8

    def __post_init__(self):
        if self.impulse_length < 1 or self.n_subcarriers < self.impulse_length:
            raise ValueError("need 1 <= impulse_length <= n_subcarriers")


@dataclass(frozen=True)
class ScenarioDistribution:
    """Ranges the per-window scenario parameters are drawn from."""

    n_clusters: int = 5
    n_subpaths: int = 20
    azimuth_mean_range: tuple = (-2 * math.pi / 3, 2 * math.pi / 3)
    zenith_mean_range: tuple = (math.pi / 4, 3 * math.pi / 4)
    bs_azimuth_spread_range: tuple = (3 * DEG, 5 * DEG)
    ue_azimuth_spread_range: tuple = (5 * DEG, 10 * DEG)
    bs_zenith_spread_range: tuple = (1 * DEG, 3 * DEG)
    ue_zenith_spread_range: tuple = (3 * DEG, 5 * DEG)
    xpr_mu_db: float = 7.0
    xpr_sigma_db: float = 3.0
    ue_rotation_max: float = math.pi / 6
    wideband: WidebandConfig = None


def mean_inverse_xpr(mu_db: float, sigma_db: float) -> float:
    """Closed-form mean of 1/XPR for a log-normal XPR with dB parameters."""
    a = math.log(10.0) / 10.0
    return math.exp(-a * mu_db + 0.5 * (a * sigma_db) ** 2)


def mean_inverse_xpr_mc(rng, mu_db: float, sigma_db: float, n: int = 1_000_000) -> float:
    """Monte Carlo estimate of mean 1/XPR; agrees with the closed form."""
    x = rng.normal(mu_db, sigma_db, size=n)
    return float(np.mean(10.0 ** (-x / 10.0)))


def draw_scenario(rng, dist: ScenarioDistribution) -> ScenarioDraw:
    """One stationarity-window draw: powers, cluster geometry, UE rotation."""
    nc = dist.n_clusters
    if nc < 1:
        raise ValueError("at least one cluster is required")
    powers = rng.uniform(0.0, 1.0, size=nc)
    total = powers.sum()
    if total == 0.0:
        powers = np.full(nc, 1.0 / nc)
    else:
        powers = powers / total
    clusters = []
    taps = None
    if dist.wideband is not None:
        L = dist.wideband.impulse_length
        if nc > L:
            raise ValueError("more clusters than delay taps available")
        taps = rng.permutation(L)[:nc]
    for c in range(nc):
        dod_mean = (rng.uniform(*dist.azimuth_mean_range), rng.uniform(*dist.zenith_mean_range))
        doa_mean = (rng.uniform(*dist.azimuth_mean_range), rng.uniform(*dist.zenith_mean_range))
        dod_spread = (rng.uniform(*dist.bs_azimuth_spread_range),
                      rng.uniform(*dist.bs_zenith_spread_range))
        doa_spread = (rng.uniform(*dist.ue_azimuth_spread_range),
                      rng.uniform(*dist.ue_zenith_spread_range))
        clusters.append(ClusterParams(
            power=float(powers[c]),
            dod_mean=dod_mean, dod_spread=dod_spread,
            doa_mean=doa_mean, doa_spread=doa_spread,
            delay_tap=int(taps[c]) if taps is not None else 0,
        ))
    rotation = tuple(rng.uniform(0.0, dist.ue_rotation_max, size=3))
    return ScenarioDraw(clusters, dist.n_subpaths,
                        (dist.xpr_mu_db, dist.xpr_sigma_db), rotation)


def _rejection_gaussian(rng, mean, sigma, size, low, high):
    """Gaussian draws truncated to [low, high] by redrawing; the §-range
    scenario spreads make redraws vanishingly rare."""
    out = rng.normal(mean, sigma, size=size)
    bad = (out < low) | (out > high)
    while np.any(bad):
        out[bad] = rng.normal(mean, sigma, size=int(bad.sum()))
        bad = (out < low) | (out > high)
    return out


def draw_subpaths(rng, scenario: ScenarioDraw, n_draws: int = 1) -> SubpathRealization:
    """Per-coherence-block subpath draws for ``n_draws`` blocks at once."""
    nc, npk = scenario.n_clusters, scenario.n_subpaths
    paths = nc * npk
    shape = (n_draws, paths)

    dod_az = np.empty(shape)
    dod_zen = np.empty(shape)
    doa_az = np.empty(shape)
    doa_zen = np.empty(shape)
    for c, cl in enumerate(scenario.clusters):
        sl = slice(c * npk, (c + 1) * npk)
        dod_az[:, sl] = _rejection_gaussian(
            rng, cl.dod_mean[0], cl.dod_spread[0], (n_draws, npk), -math.pi, math.pi)
        dod_zen[:, sl] = _rejection_gaussian(
            rng, cl.dod_mean[1], cl.dod_spread[1], (n_draws, npk), 0.0, math.pi)
        doa_az[:, sl] = _rejection_gaussian(
            rng, cl.doa_mean[0], cl.doa_spread[0], (n_draws, npk), -math.pi, math.pi)
        doa_zen[:, sl] = _rejection_gaussian(
            rng, cl.doa_mean[1], cl.doa_spread[1], (n_draws, npk), 0.0, math.pi)

    mu, sigma = scenario.xpr_lognormal
    xpr = 10.0 ** (rng.normal(mu, sigma, size=shape) / 10.0)
    phases_ul = rng.uniform(-math.pi, math.pi, size=(n_draws, paths, 4))
    phases_dl = rng.uniform(-math.pi, math.pi, size=(n_draws, paths, 4))
    return SubpathRealization(dod_az, dod_zen, doa_az, doa_zen, xpr, phases_ul, phases_dl)


def _polarization_weights(sub: SubpathRealization, scenario: ScenarioDraw,
                          ue: UePatternConfig, link: str):
    """Scalar weights multiplying a_V and a_H per subpath, (n_draws, paths)."""
    phases = sub.phases_ul if link == "ul" else sub.phases_dl
    b_v, b_h = ue_response_grid(ue, sub.doa_azimuth, sub.doa_zenith)
    inv_sqrt_k = 1.0 / np.sqrt(sub.xpr)
    e = np.exp(1j * phases)
    w_v = e[..., 0] * b_v + e[..., 1] * inv_sqrt_k * b_h
    w_h = e[..., 2] * inv_sqrt_k * b_v + e[..., 3] * b_h
    npk = scenario.n_subpaths
    amp = np.repeat(np.sqrt([c.power / npk for c in scenario.clusters]), npk)
    return amp * w_v, amp * w_h


def _synthesize_batch(sub: SubpathRealization, scenario: ScenarioDraw,
                      geom: UpaGeometry, carrier_hz: float, ue: UePatternConfig,
                      link: str = "ul", per_cluster: bool = False) -> np.ndarray:
    """Channel vectors for every draw: (N, n_draws), or (N, n_draws, n_clusters)."""
    n_draws, paths = sub.dod_azimuth.shape
    nc, npk = scenario.n_clusters, scenario.n_subpaths
    n = geom.n_antennas
    w_v, w_h = _polarization_weights(sub, scenario, ue, link)

    out_shape = (n, n_draws, nc) if per_cluster else (n, n_draws)
    out = np.zeros(out_shape, dtype=complex)
    f_slant = np.asarray(geom.slants)
    for start in range(0, n_draws, _CHUNK):
        stop = min(start + _CHUNK, n_draws)
        s = slice(start, stop)
        az = sub.dod_azimuth[s].ravel()
        zen = sub.dod_zenith[s].ravel()
        phases = steering_phases(geom, carrier_hz, az, zen)  # (positions, draws*paths)
        f_v, f_h = _element_field_grid(geom.element_pattern, f_slant, az, zen)
        m = stop - start
        phases = phases.reshape(-1, m, paths)
        for k in range(len(geom.slants)):
            coef = (f_v[k].reshape(m, paths) * w_v[s]
                    + f_h[k].reshape(m, paths) * w_h[s])
            rows = slice(k * geom.n_positions, (k + 1) * geom.n_positions)
            if per_cluster:
                ph_c = phases.reshape(-1, m * nc, npk).transpose(1, 0, 2)
                coef_c = coef.reshape(m * nc, npk, 1).astype(complex)
                prod = np.matmul(ph_c, coef_c)[:, :, 0]  # (m*nc, positions)
                out[rows, s, :] = prod.reshape(m, nc, -1).transpose(2, 0, 1)
            else:
                prod = np.matmul(phases.transpose(1, 0, 2),
                                 coef[:, :, None].astype(complex))[:, :, 0]
                out[rows, s] = prod.T
    return out


def synthesize_channel(sub: SubpathRealization, scenario: ScenarioDraw,
                       geom: UpaGeometry, carrier_hz: float, ue: UePatternConfig,
                       link: str = "ul") -> np.ndarray:
    """Narrow-band channel vector(s); (N,) for a single draw, else (N, n_draws)."""
    h = _synthesize_batch(sub, scenario, geom, carrier_hz, ue, link)
    return h[:, 0] if sub.n_draws == 1 else h


def synthesize_ofdm_channel(sub: SubpathRealization, scenario: ScenarioDraw,
                            geom: UpaGeometry, carrier_hz: float, ue: UePatternConfig,
                            wideband: WidebandConfig, link: str = "ul") -> np.ndarray:
    """Subcarrier-domain channel, one column per subcarrier.

    Single draw only; per-cluster delays put each cluster on its tap, and
    subcarrier k sees the tap phase exp(-2j*pi*k*l_c / n_subcarriers).
    """
    if sub.n_draws != 1:
        raise ValueError("OFDM synthesis expects a single draw")
    taps = np.array([c.delay_tap for c in scenario.clusters])
    if np.any(taps >= wideband.impulse_length):
        raise ValueError("cluster delay tap outside the impulse response")
    h_c = _synthesize_batch(sub, scenario, geom, carrier_hz, ue, link,
                            per_cluster=True)[:, 0, :]  # (N, n_clusters)
    k = np.arange(wideband.n_subcarriers)
    frequency_response = np.exp(-2j * math.pi * np.outer(taps, k) / wideband.n_subcarriers)
    return h_c @ frequency_response


def _gaussian_pdf(x, mean, sigma):
    return np.exp(-0.5 * ((x - mean) / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))


def aps_from_scenario(scenario: ScenarioDraw, ue: UePatternConfig, grid: AngularGrid,
                      mean_inv_xpr: float) -> PolarizedAps:
    """Ground-truth vertical/horizontal angular power spectra on the grid.

    The UE-side factor of each cluster is integrated out by quadrature on
    the same grid, leaving the BS-side densities weighted by the cluster
    powers and the terminal's polarization split; the cross-polarization
    leakage enters through the mean inverse XPR.
    """
    if mean_inv_xpr < 0:
        raise ValueError("mean inverse XPR must be nonnegative")
    b_v, b_h = ue_response_grid(ue, grid.azimuth, grid.zenith)
    gain_v = b_v ** 2 + mean_inv_xpr * b_h ** 2
    gain_h = b_h ** 2 + mean_inv_xpr * b_v ** 2
    rho_v = np.zeros(grid.size)
    rho_h = np.zeros(grid.size)
    for cl in scenario.clusters:
        f_ue = (_gaussian_pdf(grid.azimuth, cl.doa_mean[0], cl.doa_spread[0])
                * _gaussian_pdf(grid.zenith, cl.doa_mean[1], cl.doa_spread[1]))
        c_v = float(np.sum(grid.weights * f_ue * gain_v))
        c_h = float(np.sum(grid.weights * f_ue * gain_h))
        f_bs = (_gaussian_pdf(grid.azimuth, cl.dod_mean[0], cl.dod_spread[0])
                * _gaussian_pdf(grid.zenith, cl.dod_mean[1], cl.dod_spread[1]))
        rho_v += cl.power * c_v * f_bs
        rho_h += cl.power * c_h * f_bs
    return PolarizedAps(rho_v, rho_h, grid)
