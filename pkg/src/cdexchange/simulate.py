"""Event-driven runner for the exchange process.

Waiting times between encounters are Exponential(K) draws with
``K = sum_{i<j} rates[i, j]``; the meeting pair is chosen with
probability ``rates[i, j] / K`` from a precomputed alias table.

Each trajectory owns a PCG64 stream spawned from ``(config seed,
trajectory index)``, and ensemble aggregation reduces per-trajectory
results in index order, so results are bit-identical no matter how many
worker threads run the ensemble or in which order they finish.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .economy import (
    BadDimensions,
    ConfigError,
    EconomyConfig,
    State,
    _encounter_inplace,
    _gamma_fractions,
    _split_pair,
    check_state,
    config_digest,
    good_spec,
    require_validated,
    sample_dirichlet,
)

__all__ = [
    "AliasTable",
    "SimulationPlan",
    "Trajectory",
    "EnsembleStats",
    "derived_rng",
    "validate_plan",
    "simulate_trajectory",
    "run_ensemble",
    "embedded_chain_step",
    "plan_digest",
]

# Spawn-key namespaces.  Trajectories use (0, index); statistical reference
# draws elsewhere in the package use 1 and 2 so streams never collide.
_NS_TRAJECTORY = 0


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream for ``key`` under the given root seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


class AliasTable:
    """Walker alias sampler over a fixed non-negative weight vector.

    Construction walks indices in ascending order, so the table (and hence
    every stream of draws) is deterministic for a given weight vector.
    """

    __slots__ = ("n", "prob", "alias")

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D vector")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)) or w.sum() <= 0.0:
            raise ValueError("weights must be non-negative with a positive sum")
        n = w.size
        scaled = (w * (n / w.sum())).tolist()
        prob = [1.0] * n
        alias = list(range(n))
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            (small if scaled[g] < 1.0 else large).append(g)
        self.n = n
        self.prob = np.asarray(prob)
        self.alias = np.asarray(alias, dtype=np.int64)

    def draw(self, rng: np.random.Generator) -> int:
        i = int(rng.integers(self.n))
        return i if rng.random() < self.prob[i] else int(self.alias[i])

    def draw_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.integers(self.n, size=size)
        u = rng.random(size)
        return np.where(u < self.prob[idx], idx, self.alias[idx])


def _pair_table(cfg: EconomyConfig):
    """Alias table plus (i, j) lookup arrays over upper-triangle pairs."""
    n = cfg.n_agents
    iu, ju = np.triu_indices(n, 1)
    return AliasTable(cfg.rates[iu, ju]), iu, ju


@dataclass(frozen=True, eq=False)
class SimulationPlan:
    """What to simulate: which economy, for how long, how many copies,
    where snapshots are taken, and where trajectories start.

    ``initial_state`` is a :class:`State`, the string ``"endowments"``, or
    the string ``"equilibrium"`` (a fresh per-good Dirichlet draw at the
    start of every trajectory, consumed from that trajectory's stream
    before its event loop).
    """

    cfg: EconomyConfig
    t_end: float
    sample_times: np.ndarray
    n_trajectories: int
    initial_state: State | str = "endowments"


def validate_plan(plan: SimulationPlan) -> SimulationPlan:
    require_validated(plan.cfg)
    t_end = float(plan.t_end)
    if not math.isfinite(t_end) or t_end < 0.0:
        raise ConfigError(f"t_end must be a finite non-negative real, got {plan.t_end!r}")
    times = np.array(plan.sample_times, dtype=float).ravel()
    if times.size == 0:
        raise ConfigError("sample_times must be non-empty")
    if np.any(~np.isfinite(times)) or np.any(times < 0.0) or np.any(times > t_end):
        raise ConfigError("sample_times must lie within [0, t_end]")
    if np.any(np.diff(times) < 0.0):
        raise ConfigError("sample_times must be sorted ascending")
    if not isinstance(plan.n_trajectories, (int, np.integer)) or plan.n_trajectories < 1:
        raise ConfigError("n_trajectories must be a positive integer")
    init = plan.initial_state
    if isinstance(init, str):
        if init not in ("endowments", "equilibrium"):
            raise ConfigError(f"unknown initial_state {init!r}")
    elif isinstance(init, State):
        check_state(plan.cfg, init)
    else:
        raise ConfigError("initial_state must be a State or a recognized keyword")
    times.setflags(write=False)
    return replace(plan, t_end=t_end, sample_times=times,
                   n_trajectories=int(plan.n_trajectories))


@dataclass
class Trajectory:
    """Snapshots of one realization at the requested sample times.

    A snapshot at time ``s`` is the state immediately before the first
    event after ``s`` (the right-continuous value at ``s``).
    """

    sample_times: np.ndarray
    holdings: np.ndarray  # (T, N, M)
    n_events: int
    seed_used: int


def _resolve_initial(plan: SimulationPlan, rng: np.random.Generator) -> np.ndarray:
    cfg = plan.cfg
    init = plan.initial_state
    if isinstance(init, State):
        return np.array(init.holdings, dtype=float)
    if init == "endowments":
        return np.array(cfg.endowments, dtype=float)
    h = np.empty((cfg.n_agents, cfg.n_goods))
    for m in range(cfg.n_goods):
        h[:, m] = sample_dirichlet(good_spec(cfg, m), rng)
    return h


def _simulate(plan, index, alias, iu, ju):
    cfg = plan.cfg
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_NS_TRAJECTORY, index))
    seed_used = int(ss.generate_state(1, dtype=np.uint64)[0])
    rng = np.random.Generator(np.random.PCG64(ss))

    holdings = _resolve_initial(plan, rng)
    times = plan.sample_times
    t_end = plan.t_end
    total_rate = cfg.total_rate
    exponents = cfg.exponents
    n_times = times.size
    out = np.empty((n_times, cfg.n_agents, cfg.n_goods))

    t = 0.0
    ptr = 0
    n_events = 0
    log1p = math.log1p
    uniform = rng.random
    while True:
        t_next = t - log1p(-uniform()) / total_rate
        while ptr < n_times and times[ptr] < t_next:
            out[ptr] = holdings
            ptr += 1
        if t_next > t_end:
            break
        p = alias.draw(rng)
        _encounter_inplace(holdings, iu[p], ju[p], exponents, rng)
        n_events += 1
        t = t_next
    while ptr < n_times:
        out[ptr] = holdings
        ptr += 1
    return out, n_events, seed_used


def simulate_trajectory(plan: SimulationPlan, trajectory_index: int) -> Trajectory:
    """Run one trajectory.  Deterministic given (cfg.seed, trajectory_index)."""
    plan = validate_plan(plan)
    if not isinstance(trajectory_index, (int, np.integer)) or trajectory_index < 0:
        raise ValueError("trajectory_index must be a non-negative integer")
    alias, iu, ju = _pair_table(plan.cfg)
    out, n_events, seed_used = _simulate(plan, int(trajectory_index), alias, iu, ju)
    return Trajectory(plan.sample_times, out, n_events, seed_used)


@dataclass
class EnsembleStats:
    """Cross-trajectory statistics at every sample time.

    ``moment_pairs`` lists which covariance entries were computed, as
    ((agent, good), (agent, good)) index pairs; ``covariances[t, p]`` is
    the sample covariance (ddof=1) of pair ``p`` at sample time ``t``.
    Histogram counts always sum to ``n_trajectories``.
    """

    sample_times: np.ndarray
    n_trajectories: int
    means: np.ndarray             # (T, N, M)
    moment_pairs: list
    covariances: np.ndarray       # (T, P)
    histogram_edges: np.ndarray   # (M, B + 1)
    histograms: np.ndarray        # (T, N, M, B) int64
    event_counts: np.ndarray      # (n_trajectories,) int64
    plan_digest: str
    samples: np.ndarray | None = None  # (T, n, N, M) when retained


def _default_pairs(n, m):
    return [((i, g), (j, g)) for g in range(m) for i in range(n) for j in range(i, n)]


def run_ensemble(
    plan: SimulationPlan,
    *,
    moment_pairs=None,
    histogram_bins: int | None = None,
    keep_samples: bool = False,
    workers: int = 1,
) -> EnsembleStats:
    """Simulate ``plan.n_trajectories`` independent trajectories and
    aggregate them.

    ``workers`` only controls how the index range is executed; every
    trajectory is a pure function of (seed, index) and aggregation runs in
    index order, so the result is bit-identical for any worker count.
    """
    plan = validate_plan(plan)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    cfg = plan.cfg
    n_traj = plan.n_trajectories
    n_times = plan.sample_times.size
    shape = (cfg.n_agents, cfg.n_goods)
    alias, iu, ju = _pair_table(cfg)

    raw = np.empty((n_times, n_traj) + shape)
    events = np.empty(n_traj, dtype=np.int64)

    def run_block(lo, hi):
        for k in range(lo, hi):
            out, n_events, _ = _simulate(plan, k, alias, iu, ju)
            raw[:, k] = out
            events[k] = n_events

    if workers == 1:
        run_block(0, n_traj)
    else:
        bounds = np.linspace(0, n_traj, workers * 8 + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(run_block, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for f in futures:
                f.result()

    means = raw.mean(axis=1)

    pairs = _default_pairs(*shape) if moment_pairs is None else list(moment_pairs)
    centered = raw - means[:, None]
    cov = np.empty((n_times, len(pairs)))
    with np.errstate(invalid="ignore", divide="ignore"):
        for p, ((i1, m1), (i2, m2)) in enumerate(pairs):
            cov[:, p] = (centered[:, :, i1, m1] * centered[:, :, i2, m2]).sum(axis=1) / (
                n_traj - 1
            )

    bins = histogram_bins or min(64, int(math.ceil(n_traj ** (1.0 / 3.0))))
    edges = np.empty((cfg.n_goods, bins + 1))
    hist = np.empty((n_times, cfg.n_agents, cfg.n_goods, bins), dtype=np.int64)
    for m in range(cfg.n_goods):
        edges[m] = np.linspace(0.0, cfg.good_totals[m], bins + 1)
        for t in range(n_times):
            for i in range(cfg.n_agents):
                col = np.clip(raw[t, :, i, m], 0.0, cfg.good_totals[m])
                hist[t, i, m] = np.histogram(col, bins=edges[m])[0]

    return EnsembleStats(
        sample_times=plan.sample_times,
        n_trajectories=n_traj,
        means=means,
        moment_pairs=pairs,
        covariances=cov,
        histogram_edges=edges,
        histograms=hist,
        event_counts=events,
        plan_digest=plan_digest(plan),
        samples=raw if keep_samples else None,
    )


def embedded_chain_step(
    state: State, cfg: EconomyConfig, steps: int, rng: np.random.Generator
) -> State:
    """Advance the embedded (clock-free) chain: ``steps`` times, pick a
    pair with probability rates[i, j] / K and redistribute."""
    require_validated(cfg)
    if not isinstance(steps, (int, np.integer)) or steps < 0:
        raise ValueError("steps must be a non-negative integer")
    h = np.array(state.holdings, dtype=float)
    if h.shape != (cfg.n_agents, cfg.n_goods):
        raise BadDimensions("state shape does not match config")
    alias, iu, ju = _pair_table(cfg)
    exponents = cfg.exponents
    for _ in range(int(steps)):
        p = alias.draw(rng)
        _encounter_inplace(h, iu[p], ju[p], exponents, rng)
    return State(h)


def _embedded_batch(holdings, cfg, steps, rng):
    """Vectorized embedded steps across a batch of independent states.

    ``holdings`` has shape (batch, N, M) and is updated in place.
    """
    alias, iu, ju = _pair_table(cfg)
    batch = holdings.shape[0]
    rows = np.arange(batch)
    for _ in range(int(steps)):
        p = alias.draw_many(rng, batch)
        i = iu[p]
        j = ju[p]
        frac = _gamma_fractions(cfg.exponents[i], cfg.exponents[j], rng)
        pooled = holdings[rows, i] + holdings[rows, j]
        gi, gj = _split_pair(pooled, frac)
        holdings[rows, i] = gi
        holdings[rows, j] = gj
    return holdings


def plan_digest(plan: SimulationPlan) -> str:
    """Stable hex digest of (config, plan)."""
    init = plan.initial_state
    doc = {
        "config": config_digest(plan.cfg),
        "t_end": float(plan.t_end),
        "sample_times": np.asarray(plan.sample_times, dtype=float).tolist(),
        "n_trajectories": int(plan.n_trajectories),
        "initial_state": init if isinstance(init, str) else np.asarray(init.holdings).tolist(),
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
