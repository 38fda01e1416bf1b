"""Batch construction: relabeled goals, Monte-Carlo returns, n-step targets.

Returns are always of the form -sum_{k<K} gamma^k, so they are produced by
indexing one shared cumulative discount table; this keeps the sampled
values exactly equal to a brute-force discounted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gcenv, kernels
from .datagen import OfflineDataset, Trajectory
from .errors import ContractError, DatasetError, ParameterError
from .gcenv import EnvSpec


@dataclass
class RelabelStrategy:
    """Mixture over goal sources plus the future-offset geometric decay."""

    p_future: float = 0.5
    p_random: float = 0.3
    p_current: float = 0.2
    p_geo: float = 0.2

    def __post_init__(self):
        probs = (self.p_future, self.p_random, self.p_current)
        if any(p < 0 for p in probs):
            raise ParameterError("relabel probabilities must be >= 0")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ParameterError(f"relabel probabilities sum to {sum(probs)}, not 1")
        if not 0.0 < self.p_geo < 1.0:
            raise ParameterError("p_geo must lie in (0, 1)")


@dataclass
class ChunkBatch:
    """Horizon-H training chunks for the representation loss."""

    states: np.ndarray      # (B, H+1, state_dim)
    actions: np.ndarray     # (B, H, action_dim)
    goals: np.ndarray       # (B, goal_dim)
    mc_returns: np.ndarray  # (B, H)
    reached: np.ndarray     # (B,) bool: relabeled goal has a reach index

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]


@dataclass
class NStepBatch:
    """n-step TD rows for the critic (and BC rows for the actor)."""

    states: np.ndarray             # (B, state_dim)  s_t
    actions: np.ndarray            # (B, action_dim) a_t
    goals: np.ndarray              # (B, goal_dim)
    returns: np.ndarray            # (B,) R_t^{(n)} under the relabeled goal
    bootstrap_states: np.ndarray   # (B, state_dim)
    masks: np.ndarray              # (B,) 0 where success occurred in-window
    bootstrap_actions: np.ndarray | None = None  # dataset a at bootstrap step


_csum_cache: dict[float, np.ndarray] = {}


def gamma_csum(gamma: float, upto: int) -> np.ndarray:
    """Table csum[K] = sum_{k<K} gamma^k for K = 0..upto."""
    table = _csum_cache.get(gamma)
    if table is None or len(table) <= upto:
        powers = np.power(gamma, np.arange(max(upto, 256), dtype=np.float64))
        table = np.concatenate([[0.0], np.cumsum(powers)])
        table.setflags(write=False)
        _csum_cache[gamma] = table
    return table


def mc_return(
    traj: Trajectory,
    t: int,
    reach_index: int | None,
    gamma: float,
    horizon: int,
) -> float:
    """Discounted return from step t under the goal-reached-at convention.

    reach_index = j >= t: return -sum_{k<j-t} gamma^k (0 when j == t).
    reach_index = None: the truncated pessimistic sum over `horizon` steps.
    """
    if not 0.0 < gamma < 1.0:
        raise ParameterError(f"gamma must lie in (0, 1), got {gamma}")
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    if reach_index is None:
        return float(-gamma_csum(gamma, horizon)[horizon])
    if reach_index < t:
        raise ContractError(f"reach index {reach_index} precedes step {t}")
    k = reach_index - t
    return float(-gamma_csum(gamma, k)[k])


def relabel_goal(
    spec: EnvSpec,
    ds: OfflineDataset,
    traj: Trajectory,
    t: int,
    strat: RelabelStrategy,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int | None]:
    """Draw a goal for step t and report where it is (first) achieved.

    future: goal at s_{t+delta}, delta ~ Geometric(p_geo) truncated to the
    trajectory end; reach index = that step. random: a uniformly random
    state of a uniformly random trajectory; reach index = first j > t with
    is_success(s_j, goal), scanned, or None. current: goal at s_t.
    """
    if t >= len(traj):
        raise ContractError(f"step {t} out of range for trajectory of length {len(traj)}")
    u = rng.random()
    if u < strat.p_future:
        delta = min(int(rng.geometric(strat.p_geo)), len(traj) - t)
        j = t + delta
        return gcenv.goal_project(spec, traj.states[j]), j
    if u < strat.p_future + strat.p_random:
        other = ds.trajectories[rng.integers(len(ds.trajectories))]
        k = int(rng.integers(len(other.states)))
        goal = gcenv.goal_project(spec, other.states[k])
        future = traj.states[t + 1:]
        hits = gcenv.success_mask(spec, future, goal[None, :])
        if hits.any():
            return goal, t + 1 + int(np.argmax(hits))
        return goal, None
    return gcenv.goal_project(spec, traj.states[t]), t


def _eligible_ids(ds: OfflineDataset, min_len: int) -> np.ndarray:
    lengths = ds.flat().lengths
    idx = np.nonzero(lengths >= min_len)[0]
    if len(idx) == 0:
        raise DatasetError(f"no trajectory of length >= {min_len} in dataset")
    return idx


def _draw_rows(ds, min_len, batch, rng):
    """Uniform (trajectory, start) draws over trajectories of length >= min_len."""
    flat = ds.flat()
    eligible = _eligible_ids(ds, min_len)
    ti = eligible[rng.integers(len(eligible), size=batch)]
    t = rng.integers(0, flat.lengths[ti] - min_len + 1)
    return flat, ti, t


def _relabel_rows(ds, spec, flat, ti, t, strat, rng):
    """Vectorized goal relabeling for a batch of (trajectory, start) rows.

    Returns (goals, reach, has_reach): reach is the absolute state index at
    which the goal counts as achieved; has_reach is False for random goals
    the trajectory never reaches.
    """
    batch = len(ti)
    lengths = flat.lengths[ti]
    u = rng.random(batch)
    future = u < strat.p_future
    random_g = (~future) & (u < strat.p_future + strat.p_random)
    current = ~(future | random_g)

    delta = np.minimum(rng.geometric(strat.p_geo, size=batch), lengths - t)
    r_ti = rng.integers(len(flat.lengths), size=batch)
    r_si = rng.integers(0, flat.lengths[r_ti] + 1)

    reach = np.where(future, t + delta, t)
    src_traj = np.where(random_g, r_ti, ti)
    src_idx = np.where(random_g, r_si, reach)
    goals = gcenv.goal_project(
        spec, flat.states[flat.state_offsets[src_traj] + src_idx]
    )
    has_reach = np.ones(batch, dtype=bool)
    for i in np.nonzero(random_g)[0]:
        base = flat.state_offsets[ti[i]]
        tail = flat.states[base + t[i] + 1: base + lengths[i] + 1]
        hits = gcenv.success_mask(spec, tail, goals[i][None, :])
        if hits.any():
            reach[i] = t[i] + 1 + int(np.argmax(hits))
        else:
            has_reach[i] = False
    return goals, reach, has_reach


def sample_chunk(
    ds: OfflineDataset,
    spec: EnvSpec,
    horizon: int,
    strat: RelabelStrategy,
    gamma: float,
    mc_horizon: int,
    batch: int,
    rng: np.random.Generator,
) -> ChunkBatch:
    """Uniform (trajectory, start) chunks with one relabeled goal per row.

    Steps past the reach index get a return of 0 (the goal is treated as
    absorbing within the chunk).
    """
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    flat, ti, t = _draw_rows(ds, horizon, batch, rng)
    goals, reach, has_reach = _relabel_rows(ds, spec, flat, ti, t, strat, rng)
    csum = gamma_csum(gamma, mc_horizon)
    sbase = flat.state_offsets[ti] + t
    abase = flat.action_offsets[ti] + t
    states = flat.states[sbase[:, None] + np.arange(horizon + 1)]
    actions = flat.actions[abase[:, None] + np.arange(horizon)]
    ks = np.maximum(reach[:, None] - (t[:, None] + np.arange(horizon)), 0)
    mc = np.where(has_reach[:, None], -csum[ks], -csum[mc_horizon])
    return ChunkBatch(states, actions, goals, mc, has_reach)


def nstep_batch(
    ds: OfflineDataset,
    spec: EnvSpec,
    n: int,
    gamma: float,
    strat: RelabelStrategy,
    batch: int,
    rng: np.random.Generator,
    with_bootstrap_actions: bool = False,
) -> NStepBatch:
    """n-step rows with rewards recomputed under the relabeled goal.

    Success at offset k* < n truncates the window: R = -sum_{k<k*} gamma^k,
    mask = 0 and the bootstrap state is s_{t+k*+1}; otherwise the full
    window is used with mask = 1 and bootstrap s_{t+n}. Windows never cross
    trajectory ends.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    min_len = n + 1 if with_bootstrap_actions else n
    flat, ti, t = _draw_rows(ds, min_len, batch, rng)
    goals, _, _ = _relabel_rows(ds, spec, flat, ti, t, strat, rng)
    csum = gamma_csum(gamma, n)
    sbase = flat.state_offsets[ti] + t
    window = flat.states[sbase[:, None] + 1 + np.arange(n)]
    succ = gcenv.success_mask(spec, window, goals[:, None, :])
    returns, masks, kstar = kernels.nstep_scan(
        np.ascontiguousarray(succ), csum
    )
    boot = sbase + np.where(kstar < n, kstar + 1, n)
    boot_states = flat.states[boot]
    boot_actions = None
    if with_bootstrap_actions:
        boot_actions = flat.actions[
            flat.action_offsets[ti] + t + np.where(kstar < n, kstar + 1, n)
        ]
    return NStepBatch(
        flat.states[sbase], flat.actions[flat.action_offsets[ti] + t],
        goals, returns, boot_states, masks, boot_actions,
    )
