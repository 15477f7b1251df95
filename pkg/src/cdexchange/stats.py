"""Statistical verification against the exact stationary law.

Three instruments, all aimed at the product-Dirichlet target:

* closed-form first and second stationary moments,
* per-coordinate Kolmogorov-Smirnov tests against the Beta marginal,
* a binned total-variation estimate against a fresh stationary sample,
  which is a consistent estimator of TV over the binned algebra and
  therefore a lower bound on the true total variation.
"""

from __future__ import annotations

import csv
import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, kolmogorov

from .economy import (
    DirichletSpec,
    EconomyConfig,
    good_spec,
    require_validated,
    sample_dirichlet,
)
from .simulate import EnsembleStats, derived_rng

__all__ = [
    "EmptySample",
    "DegenerateParameters",
    "TooFewSamples",
    "BinningMismatch",
    "KsResult",
    "HistogramBinning",
    "default_binning",
    "dirichlet_moments",
    "marginal_ks",
    "binned_tv",
    "moment_z_scores",
    "ConvergenceReport",
    "convergence_report",
]

# Spawn-key namespaces for reference draws (trajectories use 0).
_NS_REFERENCE = 1
_NS_BASELINE = 2

_MIN_KS_SAMPLES = 35  # below this the asymptotic Kolmogorov p-value is junk


class EmptySample(ValueError):
    pass


class DegenerateParameters(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class BinningMismatch(ValueError):
    pass


KsResult = namedtuple("KsResult", ["statistic", "pvalue"])


def dirichlet_moments(spec: DirichletSpec):
    """Exact stationary mean vector and covariance matrix.

    mean_i = G * a_i / s,
    cov_ij = G^2 * (delta_ij * a_i * s - a_i * a_j) / (s^2 * (s + 1)).
    """
    a = spec.alphas
    s = spec.exponent_sum
    g = spec.total
    mean = g * a / s
    cov = (g * g) * (np.diag(a) * s - np.outer(a, a)) / (s * s * (s + 1.0))
    return mean, cov


def marginal_ks(samples, alpha_i: float, exponent_sum: float, total: float) -> KsResult:
    """Two-sided KS statistic of ``samples`` against the stationary
    marginal of one coordinate, ``total * Beta(alpha_i, exponent_sum -
    alpha_i)``, with the asymptotic Kolmogorov p-value."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("no samples")
    if x.size < _MIN_KS_SAMPLES:
        raise TooFewSamples(
            f"need at least {_MIN_KS_SAMPLES} samples for the asymptotic p-value"
        )
    if not (alpha_i > 0.0 and total > 0.0):
        raise DegenerateParameters("alpha_i and total must be positive")
    b = exponent_sum - alpha_i
    if b <= 0.0:
        raise DegenerateParameters(
            "exponent_sum must exceed alpha_i (one coordinate of >= 2 agents)"
        )
    if np.any(x < -1e-12 * total) or np.any(x > total * (1.0 + 1e-12)):
        raise ValueError("samples fall outside [0, total]")
    n = x.size
    u = np.clip(np.sort(x) / total, 0.0, 1.0)
    cdf = betainc(alpha_i, b, u)
    grid = np.arange(n + 1) / n
    stat = float(max((grid[1:] - cdf).max(), (cdf - grid[:-1]).max()))
    return KsResult(stat, float(kolmogorov(math.sqrt(n) * stat)))


@dataclass(frozen=True)
class HistogramBinning:
    """Fixed equal-width binning, one axis per coordinate.

    mode "joint" counts on the d-dimensional product grid; mode
    "marginal" bins each coordinate alone (the TV reported is then the
    max over coordinates, a weaker but always-feasible lower bound).
    """

    lower: np.ndarray
    upper: np.ndarray
    bins: int
    mode: str = "joint"

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).ravel()
        hi = np.array(self.upper, dtype=float).ravel()
        if lo.size != hi.size or lo.size == 0:
            raise BinningMismatch("lower and upper must have equal, positive length")
        if np.any(hi <= lo):
            raise BinningMismatch("upper must exceed lower on every axis")
        if not isinstance(self.bins, (int, np.integer)) or self.bins < 1:
            raise BinningMismatch("bins must be a positive integer")
        if self.mode not in ("joint", "marginal"):
            raise BinningMismatch(f"unknown mode {self.mode!r}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "bins", int(self.bins))

    @property
    def n_coords(self) -> int:
        return self.lower.size


def default_binning(n_samples: int, totals, mode: str | None = None) -> HistogramBinning:
    """House rule: ceil(n^(1/3)) equal-width bins per coordinate, capped
    at 64; joint counting up to 3 coordinates, marginal above."""
    totals = np.asarray(totals, dtype=float).ravel()
    bins = min(64, int(math.ceil(n_samples ** (1.0 / 3.0))))
    if mode is None:
        mode = "joint" if totals.size <= 3 else "marginal"
    return HistogramBinning(np.zeros_like(totals), totals, max(bins, 1), mode)


def _as_points(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise BinningMismatch("samples must be a (n,) or (n, d) array")
    return x


def _bin_indices(x, binning):
    width = (binning.upper - binning.lower) / binning.bins
    idx = np.floor((x - binning.lower) / width).astype(np.int64)
    return np.clip(idx, 0, binning.bins - 1)


def binned_tv(samples_a, samples_b, binning: HistogramBinning) -> float:
    """0.5 * sum_cells |p_hat_a - p_hat_b| over the binning's cells.

    Consistent for the TV between the binned laws, hence a lower bound on
    the true total variation (up to sampling noise).
    """
    a = _as_points(samples_a)
    b = _as_points(samples_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptySample("both sample sets must be non-empty")
    d = binning.n_coords
    if a.shape[1] != d or b.shape[1] != d:
        raise BinningMismatch(
            f"samples have {a.shape[1]} and {b.shape[1]} coordinates, binning has {d}"
        )
    ia = _bin_indices(a, binning)
    ib = _bin_indices(b, binning)
    if binning.mode == "marginal":
        best = 0.0
        for c in range(d):
            pa = np.bincount(ia[:, c], minlength=binning.bins) / a.shape[0]
            pb = np.bincount(ib[:, c], minlength=binning.bins) / b.shape[0]
            best = max(best, 0.5 * float(np.abs(pa - pb).sum()))
        return best
    n_cells = binning.bins**d
    if n_cells > 16_000_000:
        raise BinningMismatch(
            "joint binning would need too many cells; use mode='marginal'"
        )
    dims = (binning.bins,) * d
    fa = np.ravel_multi_index(ia.T, dims)
    fb = np.ravel_multi_index(ib.T, dims)
    pa = np.bincount(fa, minlength=n_cells) / a.shape[0]
    pb = np.bincount(fb, minlength=n_cells) / b.shape[0]
    return 0.5 * float(np.abs(pa - pb).sum())


def moment_z_scores(points, spec: DirichletSpec) -> np.ndarray:
    """Standardized discrepancies of sample first/second moments from the
    stationary targets.  Entries: N means, N variances, N(N-1)/2
    covariances; each is (estimate - target) / (Monte Carlo SE)."""
    x = np.asarray(points, dtype=float)
    n, d = x.shape
    if d != spec.alphas.size:
        raise BinningMismatch("points do not match the Dirichlet parameter count")
    if n < 2:
        raise TooFewSamples("need at least two points for moment z-scores")
    t_mean, t_cov = dirichlet_moments(spec)
    c = x - x.mean(axis=0)
    zs = []
    with np.errstate(invalid="ignore", divide="ignore"):
        for i in range(d):
            se = c[:, i].std(ddof=1) / math.sqrt(n)
            diff = x[:, i].mean() - t_mean[i]
            zs.append(diff / se if se > 0.0 else (0.0 if diff == 0.0 else math.inf))
        for i in range(d):
            v = (c[:, i] ** 2).sum() / (n - 1)
            m4 = (c[:, i] ** 4).mean()
            se = math.sqrt(max(m4 - v * v, 0.0) / n)
            diff = v - t_cov[i, i]
            zs.append(diff / se if se > 0.0 else (0.0 if diff == 0.0 else math.inf))
        for i in range(d):
            for j in range(i + 1, d):
                cv = (c[:, i] * c[:, j]).sum() / (n - 1)
                m22 = ((c[:, i] * c[:, j]) ** 2).mean()
                se = math.sqrt(max(m22 - cv * cv, 0.0) / n)
                diff = cv - t_cov[i, j]
                zs.append(diff / se if se > 0.0 else (0.0 if diff == 0.0 else math.inf))
    return np.asarray(zs)


@dataclass
class ConvergenceReport:
    """Distance-to-equilibrium diagnostics at every sample time."""

    sample_times: np.ndarray
    n_trajectories: int
    max_moment_z: np.ndarray      # (T,)
    ks_statistic: np.ndarray      # (T, N, M)
    ks_pvalue: np.ndarray         # (T, N, M)
    tv: np.ndarray                # (T, M), against a fresh stationary sample
    baseline_tv_mean: np.ndarray  # (M,), two-sample self-distance floor
    baseline_tv_std: np.ndarray   # (M,)
    baseline_replicates: int
    bins_per_coordinate: np.ndarray  # (M,)
    binning_modes: list
    plan_digest: str
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "plan_digest": self.plan_digest,
            "seed": int(self.seed),
            "n_trajectories": int(self.n_trajectories),
            "sample_times": self.sample_times.tolist(),
            "max_moment_z": self.max_moment_z.tolist(),
            "ks_statistic": self.ks_statistic.tolist(),
            "ks_pvalue": self.ks_pvalue.tolist(),
            "tv": self.tv.tolist(),
            "baseline_tv_mean": self.baseline_tv_mean.tolist(),
            "baseline_tv_std": self.baseline_tv_std.tolist(),
            "baseline_replicates": int(self.baseline_replicates),
            "bins_per_coordinate": [int(b) for b in self.bins_per_coordinate],
            "binning_modes": list(self.binning_modes),
        }

    def write_csv(self, path) -> None:
        """One row per sample time; columns are agent-major within good."""
        t_cnt, n, m = self.ks_statistic.shape
        with open(path, "w", newline="") as fh:
            fh.write(f"# plan_digest: {self.plan_digest}\n")
            fh.write(f"# seed: {self.seed}\n")
            w = csv.writer(fh)
            header = ["sample_time", "max_moment_z"]
            header += [f"tv_g{g}" for g in range(m)]
            header += [f"ks_a{i}_g{g}" for i in range(n) for g in range(m)]
            header += [f"ks_p_a{i}_g{g}" for i in range(n) for g in range(m)]
            w.writerow(header)
            for t in range(t_cnt):
                row = [repr(float(self.sample_times[t])), repr(float(self.max_moment_z[t]))]
                row += [repr(float(self.tv[t, g])) for g in range(m)]
                row += [
                    repr(float(self.ks_statistic[t, i, g]))
                    for i in range(n)
                    for g in range(m)
                ]
                row += [
                    repr(float(self.ks_pvalue[t, i, g]))
                    for i in range(n)
                    for g in range(m)
                ]
                w.writerow(row)


def convergence_report(
    ensemble: EnsembleStats,
    cfg: EconomyConfig,
    *,
    binning: HistogramBinning | None = None,
    baseline_replicates: int = 8,
) -> ConvergenceReport:
    """Compare an ensemble's snapshots against the exact stationary law.

    Needs an ensemble built with ``keep_samples=True``.  The TV reference
    at each (time, good) is a fresh stationary sample of equal size from a
    dedicated stream, and the reported baseline is the mean/std of the
    binned TV between ``baseline_replicates`` pairs of independent
    stationary samples (the estimator's noise floor).
    """
    require_validated(cfg)
    if ensemble.samples is None:
        raise ValueError("ensemble must be built with keep_samples=True")
    raw = ensemble.samples
    t_cnt, n_samples, n, m = raw.shape
    specs = [good_spec(cfg, g) for g in range(m)]

    max_z = np.empty(t_cnt)
    ks_stat = np.empty((t_cnt, n, m))
    ks_p = np.empty((t_cnt, n, m))
    tv = np.empty((t_cnt, m))
    bins_used = np.empty(m, dtype=np.int64)
    modes = []

    for g in range(m):
        b = binning or default_binning(n_samples, np.full(n, specs[g].total))
        bins_used[g] = b.bins
        modes.append(b.mode)
        for t in range(t_cnt):
            pts = raw[t, :, :, g]
            ref_rng = derived_rng(cfg.seed, _NS_REFERENCE, t, g)
            ref = sample_dirichlet(specs[g], ref_rng, size=n_samples)
            tv[t, g] = binned_tv(pts, ref, b)
            for i in range(n):
                res = marginal_ks(
                    pts[:, i], specs[g].alphas[i], specs[g].exponent_sum, specs[g].total
                )
                ks_stat[t, i, g] = res.statistic
                ks_p[t, i, g] = res.pvalue

    for t in range(t_cnt):
        zs = [
            np.abs(moment_z_scores(raw[t, :, :, g], specs[g])).max() for g in range(m)
        ]
        max_z[t] = max(zs)

    base_mean = np.empty(m)
    base_std = np.empty(m)
    for g in range(m):
        b = binning or default_binning(n_samples, np.full(n, specs[g].total))
        reps = []
        for r in range(baseline_replicates):
            rng = derived_rng(cfg.seed, _NS_BASELINE, r, g)
            sa = sample_dirichlet(specs[g], rng, size=n_samples)
            sb = sample_dirichlet(specs[g], rng, size=n_samples)
            reps.append(binned_tv(sa, sb, b))
        base_mean[g] = float(np.mean(reps))
        base_std[g] = float(np.std(reps, ddof=1)) if len(reps) > 1 else 0.0

    return ConvergenceReport(
        sample_times=ensemble.sample_times,
        n_trajectories=ensemble.n_trajectories,
        max_moment_z=max_z,
        ks_statistic=ks_stat,
        ks_pvalue=ks_p,
        tv=tv,
        baseline_tv_mean=base_mean,
        baseline_tv_std=base_std,
        baseline_replicates=baseline_replicates,
        bins_per_coordinate=bins_used,
        binning_modes=modes,
        plan_digest=ensemble.plan_digest,
        seed=cfg.seed,
    )
