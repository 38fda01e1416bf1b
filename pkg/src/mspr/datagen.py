"""Scripted experts and offline dataset construction.

Datasets store goal-free (state, action) trajectories; goals and rewards
are reconstructed at sampling time by hindsight relabeling. Collection
supports two regimes: `navigate` (full start-to-goal rollouts) and `stitch`
(short fragments between cells a fixed BFS distance apart), each with
optional Gaussian action noise on top of the expert.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gcenv
from .errors import ContractError, DatasetError, FormatError, ParameterError
from .gcenv import EnvSpec

DATASET_HEADER = "# mspr-dataset v1"
EXPERT_VERSION = "v1"

_PUSH_STATION_OFFSET = 0.65
_PUSH_STATION_RADIUS = 0.7


@dataclass
class Trajectory:
    """States (L+1, state_dim) and the L actions that produced them."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if len(self.actions) < 1:
            raise ContractError("trajectory must contain at least one action")
        if len(self.states) != len(self.actions) + 1:
            raise ContractError(
                f"trajectory has {len(self.states)} states for "
                f"{len(self.actions)} actions"
            )

    def __len__(self) -> int:
        return len(self.actions)


class FlatIndex:
    """Concatenated trajectory arrays for vectorized batch sampling."""

    def __init__(self, trajectories: list[Trajectory]):
        self.lengths = np.array([len(t) for t in trajectories], dtype=np.int64)
        self.state_offsets = np.concatenate(
            [[0], np.cumsum(self.lengths + 1)]
        )[:-1]
        self.action_offsets = np.concatenate([[0], np.cumsum(self.lengths)])[:-1]
        self.states = np.concatenate([t.states for t in trajectories], axis=0)
        self.actions = np.concatenate([t.actions for t in trajectories], axis=0)


@dataclass
class OfflineDataset:
    env_id: str
    trajectories: list[Trajectory]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.total_transitions() < 1:
            raise DatasetError("dataset contains no transitions")
        self._flat: FlatIndex | None = None

    def total_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def flat(self) -> FlatIndex:
        if self._flat is None:
            self._flat = FlatIndex(self.trajectories)
        return self._flat


@dataclass
class CollectConfig:
    mode: str  # "navigate" | "stitch"
    sigma: float = 0.0
    target_transitions: int = 50_000
    l_frag: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("navigate", "stitch"):
            raise ParameterError(f"unknown collect mode {self.mode!r}")
        if self.sigma < 0:
            raise ParameterError("noise sigma must be >= 0")
        if self.target_transitions < 1 or self.l_frag < 1:
            raise ParameterError("counts must be >= 1")


def derive_seed(*parts: int) -> int:
    """Stable derived integer seed for nested deterministic streams."""
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


# ---------------------------------------------------------------------------
# scripted experts
# ---------------------------------------------------------------------------

def _unit_clip(direction: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return np.zeros(2, dtype=np.float64)
    return np.clip(direction / norm, -1.0, 1.0)


def expert_action(spec: EnvSpec, s: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Greedy scripted policy toward the goal.

    Pointmaze: walk the BFS path cell by cell, aiming at the next cell
    center (at the goal point once inside the goal cell). Pushbox: approach
    the push station behind the box (0.65 opposite the box->goal direction),
    then drive into the box center.
    """
    if spec.is_maze:
        pos = np.asarray(s, dtype=np.float64)[:2]
        cell = gcenv.cell_of(pos)
        goal_cell = gcenv.cell_of(g)
        dist = gcenv.bfs_distances(spec, goal_cell)
        if dist[cell] < 0:
            raise ContractError(f"no path from cell {cell} to goal {goal_cell}")
        if cell == goal_cell:
            return _unit_clip(np.asarray(g) - pos)
        best = None
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = cell[0] + dr, cell[1] + dc
            d = dist[nr, nc]
            if d >= 0 and (best is None or d < dist[best]):
                best = (nr, nc)
        target = np.array([best[1] + 0.5, best[0] + 0.5])
        return _unit_clip(target - pos)

    agent = np.asarray(s, dtype=np.float64)[:2]
    box = np.asarray(s, dtype=np.float64)[2:4]
    to_goal = np.asarray(g, dtype=np.float64) - box
    dist_goal = float(np.linalg.norm(to_goal))
    if dist_goal == 0.0:
        return np.zeros(2, dtype=np.float64)
    u = to_goal / dist_goal
    station = box - _PUSH_STATION_OFFSET * u
    if float(np.linalg.norm(agent - station)) > _PUSH_STATION_RADIUS:
        return _unit_clip(station - agent)
    return _unit_clip(box - agent)


# ---------------------------------------------------------------------------
# collection
# ---------------------------------------------------------------------------

def _rollout(spec, start, goal, sigma, rng, max_steps):
    states = [start]
    actions = []
    s = start
    for _ in range(max_steps):
        a = expert_action(spec, s, goal)
        a = np.clip(a + rng.normal(0.0, sigma, size=2), -1.0, 1.0)
        s = gcenv.step(spec, s, a)
        states.append(s)
        actions.append(a)
        if gcenv.is_success(s, goal, spec):
            break
    return np.array(states), np.array(actions)


def _sample_navigate_pair(spec, rng_seed_a, rng_seed_b):
    start = gcenv.reset(spec, rng_seed_a)
    for attempt in range(64):
        candidate = gcenv.reset(spec, derive_seed(rng_seed_b, attempt))
        goal = gcenv.goal_project(spec, candidate[None, :])[0]
        if not gcenv.is_success(start, goal, spec):
            return start, goal
    raise ContractError("could not sample a non-trivial (start, goal) pair")


def _sample_stitch_pair(spec, rng):
    cells = spec.layout.free_cells()
    start_cell = cells[rng.integers(len(cells))]
    start = np.array(
        [start_cell[1] + rng.uniform(), start_cell[0] + rng.uniform()]
    )
    return start, start_cell


def collect(spec: EnvSpec, cfg: CollectConfig) -> OfflineDataset:
    """Roll the (noisy) expert until the transition budget is met.

    Per-trajectory seeds are derived from (cfg.seed, trajectory index), so
    collection order is stable and parallelizable.
    """
    if cfg.mode == "stitch" and not spec.is_maze:
        raise ParameterError("stitch collection is defined for maze environments")
    trajectories: list[Trajectory] = []
    total = 0
    index = 0
    while total < cfg.target_transitions:
        rng = np.random.default_rng((cfg.seed, index))
        if cfg.mode == "navigate":
            start, goal = _sample_navigate_pair(
                spec, derive_seed(cfg.seed, index, 1), derive_seed(cfg.seed, index, 2)
            )
            max_steps = spec.max_episode_len
        else:
            start, start_cell = _sample_stitch_pair(spec, rng)
            dist = gcenv.bfs_distances(spec, start_cell)
            reach = min(cfg.l_frag, int(dist.max()))
            candidates = np.argwhere(dist == reach)
            gr, gc = candidates[rng.integers(len(candidates))]
            goal = np.array([gc + rng.uniform(), gr + rng.uniform()])
            max_steps = cfg.l_frag * 8
        states, actions = _rollout(spec, start, goal, cfg.sigma, rng, max_steps)
        if len(actions) == 0:
            index += 1
            continue
        trajectories.append(Trajectory(states, actions))
        total += len(actions)
        index += 1
    metadata = {
        "env": spec.env_id,
        "mode": cfg.mode,
        "sigma": f"{cfg.sigma:.17g}",
        "seed": str(cfg.seed),
        "expert": EXPERT_VERSION,
    }
    return OfflineDataset(spec.env_id, trajectories, metadata)


def subsample(ds: OfflineDataset, fraction: float, seed: int) -> OfflineDataset:
    """Keep ceil(fraction * N) whole trajectories, chosen uniformly."""
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    n = len(ds.trajectories)
    keep = int(np.ceil(fraction * n))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=keep, replace=False))
    kept = [ds.trajectories[i] for i in idx]
    metadata = dict(ds.metadata)
    metadata["fraction"] = f"{fraction:.17g}"
    return OfflineDataset(ds.env_id, kept, metadata)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def save(ds: OfflineDataset, path) -> None:
    """Plain-text dataset: header, key=value metadata, then CSV rows.

    Each trajectory emits one row per step plus a final padded row (last=1)
    carrying the terminal state with zeroed actions.
    """
    spec = gcenv.make_spec(ds.env_id)
    sdim = spec.state_dim
    lines = [DATASET_HEADER]
    for key in ("env", "mode", "sigma", "seed", "expert", "fraction"):
        if key in ds.metadata:
            lines.append(f"{key}={ds.metadata[key]}")
    cols = (
        ["traj_id", "t"]
        + [f"s_{i}" for i in range(sdim)]
        + ["a_0", "a_1", "last"]
    )
    lines.append(",".join(cols))
    for tid, traj in enumerate(ds.trajectories):
        for t in range(len(traj)):
            row = (
                [str(tid), str(t)]
                + [_fmt(v) for v in traj.states[t]]
                + [_fmt(v) for v in traj.actions[t]]
                + ["0"]
            )
            lines.append(",".join(row))
        row = (
            [str(tid), str(len(traj))]
            + [_fmt(v) for v in traj.states[len(traj)]]
            + ["0", "0", "1"]
        )
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def load(path) -> OfflineDataset:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0] != DATASET_HEADER:
        raise FormatError(f"{path}: missing dataset header {DATASET_HEADER!r}", 1)
    metadata: dict[str, str] = {}
    i = 1
    while i < len(lines) and "=" in lines[i]:
        key, _, value = lines[i].partition("=")
        metadata[key] = value
        i += 1
    env_id = metadata.get("env")
    if env_id not in gcenv.ENV_IDS:
        raise FormatError(f"{path}: unknown or missing env {env_id!r}", i)
    spec = gcenv.make_spec(env_id)
    sdim = spec.state_dim
    ncols = 2 + sdim + 2 + 1
    if i >= len(lines):
        raise FormatError(f"{path}: missing column header", len(lines))
    i += 1  # column header row

    trajectories: list[Trajectory] = []
    cur_states: list[np.ndarray] = []
    cur_actions: list[np.ndarray] = []
    cur_id = None
    expected_t = 0
    for lineno in range(i, len(lines)):
        line = lines[lineno]
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != ncols:
            raise FormatError(
                f"{path}: expected {ncols} columns, got {len(parts)}", lineno + 1
            )
        try:
            tid = int(parts[0])
            t = int(parts[1])
            vals = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}", lineno + 1) from None
        state = np.array(vals[:sdim])
        action = np.array(vals[sdim: sdim + 2])
        last = int(vals[-1])
        if cur_id is None:
            cur_id = tid
        if tid != cur_id or t != expected_t:
            raise FormatError(
                f"{path}: row out of order (traj {tid}, t {t})", lineno + 1
            )
        cur_states.append(state)
        if last:
            trajectories.append(Trajectory(np.array(cur_states), np.array(cur_actions)))
            cur_states, cur_actions = [], []
            cur_id, expected_t = None, 0
        else:
            cur_actions.append(action)
            expected_t = t + 1
    if cur_states:
        raise FormatError(f"{path}: truncated final trajectory", len(lines))
    if not trajectories:
        raise FormatError(f"{path}: no trajectories", len(lines))
    return OfflineDataset(env_id, trajectories, metadata)


def replay_states(spec: EnvSpec, traj: Trajectory) -> np.ndarray:
    """Re-simulate a trajectory from its first state (replayability check)."""
    states = [traj.states[0]]
    s = traj.states[0]
    for a in traj.actions:
        s = gcenv.step(spec, s, a)
        states.append(s)
    return np.array(states)
