"""Monte Carlo campaign: per-window scenario draws, noisy uplink estimation,
conversion by both algorithms, a direct downlink-estimation baseline, and
CSV outputs (per-trial records plus empirical CDFs of the squared errors).

Every trial derives its random streams from (master_seed, trial_id), so
records are identical no matter how many workers run the campaign or in
which order trials complete.
"""

from __future__ import annotations

import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (
    ScenarioDistribution,
    WidebandConfig,
    aps_from_scenario,
    draw_scenario,
    draw_subpaths,
    mean_inverse_xpr,
    _synthesize_batch,
)
from .conversion import (
    ConversionOperator,
    EapmParams,
    EapmResult,
    algorithm2_eapm,
    build_conversion_operator,
    build_kernel,
    geometry_hash,
    variety_residual,
)
from .covariance import (
    PolarizedAps,
    psd_projection,
    sample_covariance,
    structured_devectorize,
    structured_vectorize,
    upa_average,
)
from .geometry import (
    SPEED_OF_LIGHT,
    AngularGrid,
    ElementPattern,
    UePatternConfig,
    UpaGeometry,
    array_response_grid,
    make_grid,
)
from .metrics import SquaredErrorRecord, grassmann_se, normalized_frobenius_se

# substream indices per trial
_STREAM_SCENARIO = 0
_STREAM_UL = 1
_STREAM_DL = 2
_STREAM_UL_NOISE = 3
_STREAM_DL_NOISE = 4


class ConfigError(Exception):
    """Configuration problem; carries a file/line locator when available."""

    def __init__(self, message, path=None, line=None):
        location = ""
        if path is not None:
            location = f"{path}:" + (f"{line}:" if line is not None else "")
            location += " "
        super().__init__(f"{location}{message}")


@dataclass
class CampaignConfig:
    ul_hz: float = 1.8e9
    dl_hz: float = 1.9e9
    n_vertical: int = 8
    n_horizontal: int = 4
    spacing_m: float = None  # default: half uplink wavelength
    bs_gain_dbi: float = 8.0
    bs_beamwidth_v_deg: float = 65.0
    bs_beamwidth_h_deg: float = 65.0
    bs_sidelobe_floor_db: float = 30.0
    bs_front_back_floor_db: float = 30.0
    n_clusters: int = 5
    n_subpaths: int = 20
    xpr_mu_db: float = 7.0
    xpr_sigma_db: float = 3.0
    n_snapshots: int = 1000
    snr_est_db: float = 10.0
    n_trials: int = 200
    master_seed: int = 1
    grid_azimuth: int = 120
    grid_zenith: int = 60
    methods: tuple = ("alg1", "alg2")
    wideband: bool = False
    n_subcarriers: int = 64
    impulse_length: int = 8
    eapm_max_iterations: int = 100
    eapm_tolerance: float = 1e-4
    eapm_extrapolation: bool = True
    truncation: float = 1e-8
    out_dir: str = "out"
    operator_cache: str = None

    def __post_init__(self):
        if self.ul_hz <= 0 or self.dl_hz <= 0:
            raise ConfigError("carrier frequencies must be positive")
        if self.n_snapshots < 1:
            raise ConfigError("n_snapshots must be at least 1")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be at least 1")
        for m in self.methods:
            if m not in ("alg1", "alg2"):
                raise ConfigError(f"unknown method {m!r}")

    @property
    def spacing(self) -> float:
        if self.spacing_m is not None:
            return self.spacing_m
        return SPEED_OF_LIGHT / self.ul_hz / 2.0

    def geometry(self) -> UpaGeometry:
        pattern = ElementPattern(
            gain_dbi=self.bs_gain_dbi,
            bw_vertical_deg=self.bs_beamwidth_v_deg,
            bw_horizontal_deg=self.bs_beamwidth_h_deg,
            sidelobe_floor_db=self.bs_sidelobe_floor_db,
            front_back_floor_db=self.bs_front_back_floor_db,
        )
        return UpaGeometry(self.n_vertical, self.n_horizontal, self.spacing,
                           element_pattern=pattern)

    def distribution(self) -> ScenarioDistribution:
        wb = WidebandConfig(self.n_subcarriers, self.impulse_length) if self.wideband else None
        return ScenarioDistribution(
            n_clusters=self.n_clusters, n_subpaths=self.n_subpaths,
            xpr_mu_db=self.xpr_mu_db, xpr_sigma_db=self.xpr_sigma_db,
            wideband=wb,
        )

    def grid(self) -> AngularGrid:
        return make_grid(self.grid_azimuth, self.grid_zenith)


_CONFIG_TYPES = {
    "ul_hz": float, "dl_hz": float,
    "n_vertical": int, "n_horizontal": int, "spacing_m": float,
    "bs_gain_dbi": float, "bs_beamwidth_v_deg": float, "bs_beamwidth_h_deg": float,
    "bs_sidelobe_floor_db": float, "bs_front_back_floor_db": float,
    "n_clusters": int, "n_subpaths": int,
    "xpr_mu_db": float, "xpr_sigma_db": float,
    "n_snapshots": int, "snr_est_db": float,
    "n_trials": int, "master_seed": int,
    "grid": "grid", "methods": "methods",
    "wideband": bool, "n_subcarriers": int, "impulse_length": int,
    "eapm_max_iterations": int, "eapm_tolerance": float, "eapm_extrapolation": bool,
    "truncation": float, "out_dir": str, "operator_cache": str,
}


def parse_config(path) -> CampaignConfig:
    """Flat 'key = value' file with '#' comments; unknown keys are errors."""
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("expected 'key = value'", path, line_no)
            key, _, text = line.partition("=")
            key = key.strip().lower()
            text = text.strip()
            if key not in _CONFIG_TYPES:
                raise ConfigError(f"unknown key {key!r}", path, line_no)
            kind = _CONFIG_TYPES[key]
            try:
                if kind == "grid":
                    az, _, zen = text.lower().partition("x")
                    values["grid_azimuth"] = int(az)
                    values["grid_zenith"] = int(zen)
                elif kind == "methods":
                    values["methods"] = tuple(m.strip() for m in text.split(",") if m.strip())
                elif kind is bool:
                    if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(text)
                    values[key] = text.lower() in ("true", "1", "yes")
                else:
                    values[key] = kind(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", path, line_no) from None
    try:
        return CampaignConfig(**values)
    except ConfigError as exc:
        raise ConfigError(str(exc), path) from None


@dataclass
class CampaignAssets:
    """Per-campaign immutable products shared by all trials."""

    geometry: UpaGeometry
    grid: AngularGrid
    steering_ul: tuple
    steering_dl: tuple
    kernel_ul: object
    kernel_dl: object
    operator: ConversionOperator
    distribution: ScenarioDistribution
    eapm: EapmParams


def build_assets(cfg: CampaignConfig) -> CampaignAssets:
    geom = cfg.geometry()
    grid = cfg.grid()
    steering_ul = array_response_grid(geom, cfg.ul_hz, grid.azimuth, grid.zenith)
    steering_dl = array_response_grid(geom, cfg.dl_hz, grid.azimuth, grid.zenith)
    kernel_ul = build_kernel(geom, cfg.ul_hz, grid, "structured", steering=steering_ul)
    kernel_dl = build_kernel(geom, cfg.dl_hz, grid, "structured", steering=steering_dl)
    operator = None
    if cfg.operator_cache and os.path.exists(cfg.operator_cache):
        from .conversion import load_operator

        operator = load_operator(cfg.operator_cache)
        expected = {
            "geometry_hash": geometry_hash(geom),
            "ul_hz": f"{cfg.ul_hz:.17g}",
            "dl_hz": f"{cfg.dl_hz:.17g}",
            "grid": f"{grid.n_azimuth}x{grid.n_zenith}",
            "mode": "structured",
            "truncation": f"{cfg.truncation:.17g}",
        }
        for key, value in expected.items():
            if operator.provenance.get(key) != value:
                raise ConfigError(
                    f"operator cache {cfg.operator_cache} was built for "
                    f"{key}={operator.provenance.get(key)}, campaign needs {value}")
    if operator is None:
        operator = build_conversion_operator(kernel_ul, kernel_dl, cfg.truncation)
    eapm = EapmParams(cfg.eapm_max_iterations, cfg.eapm_tolerance, cfg.eapm_extrapolation)
    return CampaignAssets(geom, grid, steering_ul, steering_dl, kernel_ul, kernel_dl,
                          operator, cfg.distribution(), eapm)


@dataclass
class TrialRecord:
    trial_id: int
    seed: str
    records: list
    diagnostics: dict = field(default_factory=dict)


def _trial_rng(cfg: CampaignConfig, trial_id: int, stream: int):
    return np.random.default_rng([cfg.master_seed, trial_id, stream])


def _complex_noise(rng, shape, power: float) -> np.ndarray:
    scale = math.sqrt(power / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _snapshots(rng, scenario, geom, carrier_hz, ue, cfg: CampaignConfig, link: str):
    """(n_snapshots, N) channel snapshots; fast parameters redrawn per snapshot."""
    sub = draw_subpaths(rng, scenario, cfg.n_snapshots)
    if cfg.wideband:
        wb = WidebandConfig(cfg.n_subcarriers, cfg.impulse_length)
        h_c = _synthesize_batch(sub, scenario, geom, carrier_hz, ue, link,
                                per_cluster=True)  # (N, S, n_clusters)
        taps = np.array([c.delay_tap for c in scenario.clusters])
        # snapshot s observes subcarrier s mod n_subcarriers
        k = np.arange(cfg.n_snapshots) % wb.n_subcarriers
        phase = np.exp(-2j * math.pi * np.outer(k, taps) / wb.n_subcarriers)  # (S, C)
        h = np.einsum("nsc,sc->ns", h_c, phase)
    else:
        h = _synthesize_batch(sub, scenario, geom, carrier_hz, ue, link)
    return h.T


def _estimate_covariance(snapshots: np.ndarray, noise_power: float,
                         geom: UpaGeometry) -> np.ndarray:
    """Covariance estimate from noisy snapshots.

    The known per-antenna noise floor is removed before the PSD projection;
    without the removal the sample covariance is already PSD and the
    projection would never act.
    """
    n = snapshots.shape[1]
    raw = sample_covariance(snapshots) - noise_power * np.eye(n)
    return upa_average(psd_projection(raw), geom)


def run_trial(cfg: CampaignConfig, trial_id: int, assets: CampaignAssets = None) -> TrialRecord:
    """One stationarity window: estimate, convert, score against the truth."""
    if assets is None:
        assets = build_assets(cfg)
    geom, grid = assets.geometry, assets.grid
    n = geom.n_antennas

    scenario = draw_scenario(_trial_rng(cfg, trial_id, _STREAM_SCENARIO), assets.distribution)
    ue = UePatternConfig(rotation=scenario.ue_rotation)
    inv_xpr = mean_inverse_xpr(cfg.xpr_mu_db, cfg.xpr_sigma_db)
    aps_true = aps_from_scenario(scenario, ue, grid, inv_xpr)

    from .covariance import covariance_from_aps

    r_ul = covariance_from_aps(aps_true, geom, cfg.ul_hz, grid, steering=assets.steering_ul)
    r_dl = covariance_from_aps(aps_true, geom, cfg.dl_hz, grid, steering=assets.steering_dl)

    snr = 10.0 ** (cfg.snr_est_db / 10.0)
    h_ul = _snapshots(_trial_rng(cfg, trial_id, _STREAM_UL), scenario, geom,
                      cfg.ul_hz, ue, cfg, "ul")
    noise_ul = float(np.trace(r_ul).real) / (n * snr)
    h_ul = h_ul + _complex_noise(_trial_rng(cfg, trial_id, _STREAM_UL_NOISE),
                                 h_ul.shape, noise_ul)
    r_ul_hat = _estimate_covariance(h_ul, noise_ul, geom)

    unaveraged = psd_projection(sample_covariance(h_ul) - noise_ul * np.eye(n))
    records = []
    diagnostics = {
        "structure_violation": float(np.linalg.norm(
            unaveraged - upa_average(unaveraged, geom), "fro")),
    }

    r_u_vec = structured_vectorize(r_ul_hat, geom)
    for method in cfg.methods:
        flags = []
        if method == "alg1":
            r_d_vec = assets.operator.apply(r_u_vec)
            aps_hat = None
            iters = 0
            residual = 0.0
        else:
            result: EapmResult = algorithm2_eapm(
                assets.kernel_ul, assets.kernel_dl, r_u_vec, assets.eapm,
                cfg.truncation)
            r_d_vec = result.r_d
            iters = result.iterations
            residual = result.residual
            if not result.converged:
                flags.append("eapm_maxiter")
        r_dl_hat = psd_projection(structured_devectorize(r_d_vec, geom))
        g_se, tied = grassmann_se(r_dl, r_dl_hat, return_info=True)
        if tied:
            flags.append("grassmann_tie")
        records.append(SquaredErrorRecord(
            frobenius_se=normalized_frobenius_se(r_dl, r_dl_hat),
            grassmann_se=g_se, trial_id=trial_id, method=method, flags=flags))
        diagnostics[f"{method}_iters"] = iters
        diagnostics[f"{method}_residual"] = residual

    # baseline: the same estimator applied to noisy downlink snapshots
    h_dl = _snapshots(_trial_rng(cfg, trial_id, _STREAM_DL), scenario, geom,
                      cfg.dl_hz, ue, cfg, "dl")
    noise_dl = float(np.trace(r_dl).real) / (n * snr)
    h_dl = h_dl + _complex_noise(_trial_rng(cfg, trial_id, _STREAM_DL_NOISE),
                                 h_dl.shape, noise_dl)
    r_dl_direct = _estimate_covariance(h_dl, noise_dl, geom)
    g_se, tied = grassmann_se(r_dl, r_dl_direct, return_info=True)
    records.append(SquaredErrorRecord(
        frobenius_se=normalized_frobenius_se(r_dl, r_dl_direct),
        grassmann_se=g_se, trial_id=trial_id, method="baseline",
        flags=["grassmann_tie"] if tied else []))

    # all-zeros reference estimate
    zero = np.zeros_like(r_dl)
    g_se, tied = grassmann_se(r_dl, zero, return_info=True)
    records.append(SquaredErrorRecord(
        frobenius_se=normalized_frobenius_se(r_dl, zero),
        grassmann_se=g_se, trial_id=trial_id, method="zero",
        flags=["grassmann_tie"] if tied else []))

    return TrialRecord(trial_id, f"{cfg.master_seed}-{trial_id}", records, diagnostics)


def _worker_count() -> int:
    env = os.environ.get("FDDCOV_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"FDDCOV_THREADS={env!r} is not an integer")
    return os.cpu_count() or 1


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _csv_row_for(record: SquaredErrorRecord, trial: TrialRecord, diag: dict) -> str:
    iters = diag.get(f"{record.method}_iters", 0)
    residual = diag.get(f"{record.method}_residual", 0.0)
    flags = ";".join(record.flags)
    return ",".join([
        str(trial.trial_id), trial.seed, record.method,
        _fmt(record.frobenius_se), _fmt(record.grassmann_se),
        str(iters), _fmt(residual), flags,
    ])


def run_campaign(cfg: CampaignConfig):
    """Run all trials and write trials.csv, per-method CDF files and
    summary.csv under cfg.out_dir.  Returns the summary as a dict."""
    assets = build_assets(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)

    results = {}

    def one(tid):
        try:
            return tid, run_trial(cfg, tid, assets)
        except Exception as exc:  # trial failure aborts the trial, not the run
            return tid, exc

    workers = _worker_count()
    if workers == 1:
        outcomes = [one(t) for t in range(cfg.n_trials)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, range(cfg.n_trials)))
    for tid, outcome in outcomes:
        if isinstance(outcome, Exception):
            print(f"trial {tid} failed: {outcome!r}", file=sys.stderr)
        else:
            results[tid] = outcome

    header = "trial_id,seed,method,frobenius_se,grassmann_se,eapm_iters,residual,flags"
    lines = [header]
    for tid in sorted(results):
        trial = results[tid]
        for record in trial.records:
            lines.append(_csv_row_for(record, trial, trial.diagnostics))
    with open(os.path.join(cfg.out_dir, "trials.csv"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")

    methods = list(cfg.methods) + ["baseline", "zero"]
    summary = {}
    summary_lines = ["method,metric,median,q1,q3"]
    for method in methods:
        per_metric = {
            "frobenius": [t.records[i].frobenius_se for t in results.values()
                          for i in range(len(t.records)) if t.records[i].method == method],
            "grassmann": [t.records[i].grassmann_se for t in results.values()
                          for i in range(len(t.records)) if t.records[i].method == method],
        }
        for metric, values in per_metric.items():
            if not values:
                continue
            ordered = np.sort(np.array(values))
            cdf_lines = ["se_value,empirical_cdf"]
            for i, v in enumerate(ordered):
                cdf_lines.append(f"{_fmt(float(v))},{_fmt((i + 1) / ordered.size)}")
            name = f"cdf_{metric}_{method}.csv"
            with open(os.path.join(cfg.out_dir, name), "w", encoding="utf-8") as f:
                f.write("\n".join(cdf_lines) + "\n")
            stats = {
                "median": float(np.median(ordered)),
                "q1": float(np.percentile(ordered, 25)),
                "q3": float(np.percentile(ordered, 75)),
            }
            summary[(method, metric)] = stats
            summary_lines.append(
                f"{method},{metric},{_fmt(stats['median'])},{_fmt(stats['q1'])},"
                f"{_fmt(stats['q3'])}")
    with open(os.path.join(cfg.out_dir, "summary.csv"), "w", encoding="utf-8") as f:
        f.write("\n".join(summary_lines) + "\n")
    return summary
