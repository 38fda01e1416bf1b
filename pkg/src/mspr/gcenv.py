"""Deterministic goal-conditioned toy environments.

Two families:

* ``pointmaze_medium`` / ``pointmaze_large`` -- a point agent in a walled
  grid maze with continuous positions in cell units. State is (x, y) with
  x = col + 0.5 style coordinates; cell (row, col) = (floor(y), floor(x)).
* ``pushbox`` -- an agent and a box in the open arena [0, 5]^2; the agent
  displaces the box on contact (minimum separation 0.6). State is
  (ax, ay, bx, by); goals are box target positions.

All dynamics are pure functions of (spec, state, action); the only
randomness lives in `reset` seeds and in data collection.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, ParameterError

ENV_IDS = ("pointmaze_medium", "pointmaze_large", "pushbox")

WALL_MARGIN = 0.01
PUSH_SEPARATION = 0.6
ARENA_LO = 0.0
ARENA_HI = 5.0

_MEDIUM_ROWS = (
    "#######",
    "#.....#",
    "#####.#",
    "#.....#",
    "#.#####",
    "#.....#",
    "#######",
)

_LARGE_ROWS = (
    "###########",
    "#.........#",
    "#########.#",
    "#.........#",
    "#.#########",
    "#.........#",
    "#####.#####",
    "#.........#",
    "#.........#",
    "#.........#",
    "###########",
)

# Fixed evaluation tasks: (start cell, goal cell) as (row, col), ordered by
# increasing BFS path length (3,4,10,14,16 medium; 5,8,16,22,32 large).
_MEDIUM_TASKS = (
    ((1, 1), (1, 4)),
    ((1, 5), (3, 3)),
    ((1, 1), (3, 1)),
    ((5, 5), (1, 3)),
    ((1, 1), (5, 5)),
)
_LARGE_TASKS = (
    ((1, 1), (1, 6)),
    ((3, 9), (3, 1)),
    ((1, 9), (5, 5)),
    ((9, 1), (3, 9)),
    ((1, 1), (9, 9)),
)

# Pushbox tasks: (agent xy, box xy, goal xy), ordered by box->goal distance.
_PUSHBOX_TASKS = (
    ((1.0, 1.0), (2.5, 2.5), (3.2, 2.5)),
    ((4.0, 4.0), (2.5, 2.5), (1.2, 2.5)),
    ((1.0, 4.0), (2.5, 2.5), (4.3, 1.6)),
    ((0.7, 0.7), (1.5, 1.5), (3.5, 3.5)),
    ((4.3, 4.3), (3.8, 3.8), (1.0, 1.0)),
)


@dataclass(frozen=True)
class MazeLayout:
    """Boolean wall grid; border cells are walls, free region is connected."""

    walls: np.ndarray  # (H, W) bool, True = wall

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    @property
    def width(self) -> int:
        return self.walls.shape[1]

    def free_cells(self) -> list[tuple[int, int]]:
        rr, cc = np.nonzero(~self.walls)
        return list(zip(rr.tolist(), cc.tolist()))

    def dump(self) -> str:
        return "\n".join(
            "".join("#" if w else "." for w in row) for row in self.walls
        )


def _layout_from_rows(rows) -> MazeLayout:
    walls = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)
    walls.setflags(write=False)
    return MazeLayout(walls)


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    layout: MazeLayout | None
    action_scale: float
    success_radius: float
    max_episode_len: int

    @property
    def is_maze(self) -> bool:
        return self.layout is not None

    @property
    def state_dim(self) -> int:
        return 2 if self.is_maze else 4

    @property
    def goal_dim(self) -> int:
        return 2

    @property
    def enc_dim(self) -> int:
        """Width of encoder inputs (goal-slot flag appended for pushbox)."""
        return 2 if self.is_maze else 5


_LAYOUTS = {
    "pointmaze_medium": _layout_from_rows(_MEDIUM_ROWS),
    "pointmaze_large": _layout_from_rows(_LARGE_ROWS),
}


def make_spec(env_id: str, max_episode_len: int = 200) -> EnvSpec:
    if env_id not in ENV_IDS:
        raise ParameterError(f"unknown env id {env_id!r}; expected one of {ENV_IDS}")
    if env_id == "pushbox":
        return EnvSpec(env_id, None, 0.25, 0.4, max_episode_len)
    return EnvSpec(env_id, _LAYOUTS[env_id], 0.25, 0.5, max_episode_len)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def reset(spec: EnvSpec, seed: int) -> np.ndarray:
    """Uniform state over free space (maze) / arena with separation (pushbox)."""
    rng = np.random.default_rng(seed)
    if spec.is_maze:
        cells = spec.layout.free_cells()
        r, c = cells[rng.integers(len(cells))]
        off = rng.uniform(0.0, 1.0, size=2)
        return np.array([c + off[0], r + off[1]], dtype=np.float64)
    lo, hi = ARENA_LO + WALL_MARGIN, ARENA_HI - WALL_MARGIN
    agent = rng.uniform(lo, hi, size=2)
    while True:
        box = rng.uniform(lo, hi, size=2)
        if np.linalg.norm(agent - box) >= PUSH_SEPARATION:
            break
    return np.concatenate([agent, box])


def step(spec: EnvSpec, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Deterministic transition; action components are clipped to [-1, 1]."""
    ax = float(a[0])
    ay = float(a[1])
    if spec.is_maze:
        nx, ny = kernels.maze_step(
            float(s[0]), float(s[1]), ax, ay, spec.action_scale,
            spec.layout.walls, WALL_MARGIN,
        )
        return np.array([nx, ny], dtype=np.float64)
    nax, nay, bx, by = kernels.pushbox_step(
        float(s[0]), float(s[1]), float(s[2]), float(s[3]), ax, ay,
        spec.action_scale, ARENA_LO, ARENA_HI, WALL_MARGIN, PUSH_SEPARATION,
    )
    return np.array([nax, nay, bx, by], dtype=np.float64)


def goal_project(spec: EnvSpec, states: np.ndarray) -> np.ndarray:
    """The goal-space projection of states (agent position / box position)."""
    states = np.asarray(states, dtype=np.float64)
    if spec.is_maze:
        return states[..., 0:2]
    return states[..., 2:4]


def is_success(s: np.ndarray, g: np.ndarray, spec: EnvSpec) -> bool:
    """Inclusive success test: projected distance <= success radius."""
    d = np.linalg.norm(goal_project(spec, np.asarray(s, dtype=np.float64)) - g)
    return bool(d <= spec.success_radius)


def reward(s_next: np.ndarray, g: np.ndarray, spec: EnvSpec) -> float:
    return 0.0 if is_success(s_next, g, spec) else -1.0


def success_mask(spec: EnvSpec, states: np.ndarray, goals: np.ndarray) -> np.ndarray:
    """Vectorized is_success over matching leading dimensions."""
    proj = goal_project(spec, states)
    d2 = np.sum((proj - goals) ** 2, axis=-1)
    return d2 <= spec.success_radius ** 2


def sample_eval_task(spec: EnvSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    """One of 5 fixed (start, goal) pairs, ordered by path difficulty."""
    if not 0 <= index <= 4:
        raise ParameterError(f"task index {index} out of range 0..4")
    if spec.is_maze:
        tasks = _MEDIUM_TASKS if spec.env_id == "pointmaze_medium" else _LARGE_TASKS
        (sr, sc), (gr, gc) = tasks[index]
        start = np.array([sc + 0.5, sr + 0.5], dtype=np.float64)
        goal = np.array([gc + 0.5, gr + 0.5], dtype=np.float64)
        return start, goal
    agent, box, goal = _PUSHBOX_TASKS[index]
    start = np.array(agent + box, dtype=np.float64)
    return start, np.array(goal, dtype=np.float64)


def layout_dump(spec: EnvSpec) -> str:
    """Wall grid as '#'/'.' lines (pushbox renders its empty arena)."""
    if spec.is_maze:
        return spec.layout.dump()
    side = int(ARENA_HI - ARENA_LO) + 2
    rows = []
    for r in range(side):
        if r in (0, side - 1):
            rows.append("#" * side)
        else:
            rows.append("#" + "." * (side - 2) + "#")
    return "\n".join(rows)


# ---------------------------------------------------------------------------
# grid reachability (used by the scripted expert and by tests)
# ---------------------------------------------------------------------------

_NEIGHBOR_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))
_dist_cache: dict[tuple[str, tuple[int, int]], np.ndarray] = {}


def cell_of(pos: np.ndarray) -> tuple[int, int]:
    return int(np.floor(pos[1])), int(np.floor(pos[0]))


def bfs_distances(spec: EnvSpec, goal_cell: tuple[int, int]) -> np.ndarray:
    """Cell distances to goal_cell over free cells; -1 for unreachable/walls."""
    if not spec.is_maze:
        raise ContractError("bfs_distances is defined for maze environments")
    key = (spec.env_id, goal_cell)
    cached = _dist_cache.get(key)
    if cached is not None:
        return cached
    walls = spec.layout.walls
    if walls[goal_cell]:
        raise ContractError(f"goal cell {goal_cell} is a wall")
    dist = np.full(walls.shape, -1, dtype=np.int64)
    dist[goal_cell] = 0
    q = deque([goal_cell])
    while q:
        r, c = q.popleft()
        for dr, dc in _NEIGHBOR_OFFSETS:
            nr, nc = r + dr, c + dc
            if not walls[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                q.append((nr, nc))
    dist.setflags(write=False)
    _dist_cache[key] = dist
    return dist


def bfs_path_length(spec: EnvSpec, start_cell, goal_cell) -> int:
    d = bfs_distances(spec, tuple(goal_cell))[tuple(start_cell)]
    if d < 0:
        raise ContractError(f"no path from {start_cell} to {goal_cell}")
    return int(d)


# ---------------------------------------------------------------------------
# encoder input construction
# ---------------------------------------------------------------------------

def _maze_norm(spec: EnvSpec, coords: np.ndarray) -> np.ndarray:
    half = spec.layout.width / 2.0
    return coords / half - 1.0


def _arena_norm(coords: np.ndarray) -> np.ndarray:
    half = (ARENA_HI - ARENA_LO) / 2.0
    return (coords - ARENA_LO) / half - 1.0


def states_to_inputs(spec: EnvSpec, states: np.ndarray) -> np.ndarray:
    """Map raw states onto the shared encoder input space.

    Coordinates are affinely normalized to roughly [-1, 1]. For pushbox a
    trailing goal-slot flag (0 for states) pads the input to enc_dim.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if spec.is_maze:
        return _maze_norm(spec, states)
    out = np.zeros((states.shape[0], spec.enc_dim), dtype=np.float64)
    out[:, 0:4] = _arena_norm(states)
    return out


def goals_to_inputs(spec: EnvSpec, goals: np.ndarray) -> np.ndarray:
    """Goals in the same input space; zero-padded with goal-slot flag = 1."""
    goals = np.atleast_2d(np.asarray(goals, dtype=np.float64))
    if spec.is_maze:
        return _maze_norm(spec, goals)
    out = np.zeros((goals.shape[0], spec.enc_dim), dtype=np.float64)
    out[:, 2:4] = _arena_norm(goals)
    out[:, 4] = 1.0
    return out
