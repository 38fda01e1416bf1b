"""Evaluation and analysis: success rates, ablation masks, robustness grids,
value-error maps, episode traces, and latent-geometry diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import datagen, gcenv, representation as rep, sampler
from .agent import AgentParams, TrainConfig, Trainer, act_batch, q_values
from .datagen import CollectConfig, OfflineDataset
from .errors import ContractError, ParameterError
from .gcenv import EnvSpec
from .representation import LossWeights, ReprParams, TargetReprParams
from .sampler import gamma_csum

LOCOMOTION_SIGMAS = (0.2, 0.3, 0.4, 0.5)
MANIPULATION_SIGMAS = (0.1, 0.2, 0.3, 0.4)
FRACTIONS = (0.25, 0.5, 0.75, 1.0)

VARIANT_IDS = ("D", "DI", "DIR", "DIR_gact", "DIR_gdyn", "FULL", "GCBC")

# LossWeights masks per ablation variant (dyn, inv, gdyn, gact, rew).
_VARIANT_MASKS = {
    "D": (1.0, 0.0, 0.0, 0.0, 0.0),
    "DI": (1.0, 1.0, 0.0, 0.0, 0.0),
    "DIR": (1.0, 1.0, 0.0, 0.0, 1.0),
    "DIR_gact": (1.0, 1.0, 0.0, 1.0, 1.0),
    "DIR_gdyn": (1.0, 1.0, 1.0, 0.0, 1.0),
    "FULL": (1.0, 1.0, 1.0, 1.0, 1.0),
}


@dataclass
class EvalReport:
    per_task: np.ndarray        # (5,) success rate per fixed task
    mean_success: float
    mean_episode_len: float
    seed: int


@dataclass
class ValueErrorMap:
    points: np.ndarray          # (N, 2) sample positions (cell-resolution grid)
    q: np.ndarray               # (N,) critic estimates
    mc: np.ndarray              # (N,) policy-rollout discounted returns
    error: np.ndarray           # (N,) q - mc
    goal: np.ndarray


@dataclass
class EpisodeTrace:
    states: np.ndarray          # (T+1, state_dim)
    actions: np.ndarray         # (T, 2)
    q_values: np.ndarray        # (T,)
    latent_dists: np.ndarray    # (T+1,) ||z_t - z_g||
    success: bool
    task_index: int


@dataclass
class AblationSpec:
    """Variant id plus the loss mask / agent switches it induces."""

    variant: str

    def __post_init__(self):
        if self.variant not in VARIANT_IDS:
            raise ParameterError(
                f"unknown variant {self.variant!r}; expected one of {VARIANT_IDS}"
            )

    def loss_weights(self) -> LossWeights | None:
        if self.variant == "GCBC":
            return None
        return LossWeights(*_VARIANT_MASKS[self.variant])

    def apply(self, cfg: TrainConfig) -> TrainConfig:
        if self.variant == "GCBC":
            return replace(
                cfg,
                repr_enabled=False,
                critic_enabled=False,
                actor_q_enabled=False,
            )
        return replace(cfg, loss_weights=self.loss_weights())


# ---------------------------------------------------------------------------
# rollouts and evaluation
# ---------------------------------------------------------------------------

def rollout_batch(policy, spec: EnvSpec, starts, goals, max_steps=None):
    """Roll a batched deterministic policy; episodes freeze once successful.

    Returns (success (B,), first_success_step (B,), finals (B, sd)) where
    first_success_step counts executed actions (0 = success at the start)
    and equals max_steps for failures.
    """
    max_steps = spec.max_episode_len if max_steps is None else max_steps
    states = np.array(starts, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    b = states.shape[0]
    done = gcenv.success_mask(spec, states, goals).copy()
    steps = np.where(done, 0, max_steps).astype(np.int64)
    for t in range(max_steps):
        if done.all():
            break
        live = ~done
        actions = policy(states[live], goals[live])
        idx = np.nonzero(live)[0]
        for j, i in enumerate(idx):
            states[i] = gcenv.step(spec, states[i], actions[j])
        hits = gcenv.success_mask(spec, states[idx], goals[idx])
        newly = idx[hits]
        done[newly] = True
        steps[newly] = t + 1
    return done, steps, states


def policy_from(rp: ReprParams, ap: AgentParams, spec: EnvSpec):
    def policy(states, goals):
        return act_batch(rp, ap, spec, states, goals)

    return policy


def evaluate_policy(
    policy, spec: EnvSpec, episodes_per_task: int, seed: int
) -> EvalReport:
    """Roll the 5 fixed tasks, `episodes_per_task` rollouts each."""
    if episodes_per_task < 1:
        raise ParameterError("episodes_per_task must be >= 1")
    starts, goals, task_of = [], [], []
    for task in range(5):
        s0, g = gcenv.sample_eval_task(spec, task)
        for _ in range(episodes_per_task):
            starts.append(s0)
            goals.append(g)
            task_of.append(task)
    done, steps, _ = rollout_batch(policy, spec, np.array(starts), np.array(goals))
    task_of = np.array(task_of)
    per_task = np.array(
        [done[task_of == k].mean() for k in range(5)], dtype=np.float64
    )
    return EvalReport(
        per_task=per_task,
        mean_success=float(done.mean()),
        mean_episode_len=float(steps.mean()),
        seed=seed,
    )


def evaluate(
    rp: ReprParams,
    ap: AgentParams,
    spec: EnvSpec,
    episodes_per_task: int = 50,
    seed: int = 0,
) -> EvalReport:
    return evaluate_policy(policy_from(rp, ap, spec), spec, episodes_per_task, seed)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def value_error_map(
    rp: ReprParams,
    ap: AgentParams,
    spec: EnvSpec,
    goal: np.ndarray,
    grid_resolution: int = 1,
    gamma: float = 0.99,
    mc_horizon: int = 200,
) -> ValueErrorMap:
    """Q-estimate minus policy-rollout MC return over free-cell points.

    The MC ground truth rolls the agent's own policy from each point and
    applies the sampler's return convention (success -> partial geometric
    sum, truncation -> pessimistic sum over mc_horizon steps).
    """
    if not spec.is_maze:
        raise ParameterError("value_error_map is defined for maze environments")
    if grid_resolution < 1:
        raise ParameterError("grid_resolution must be >= 1")
    offsets = (np.arange(grid_resolution) + 0.5) / grid_resolution
    points = []
    for r, c in spec.layout.free_cells():
        for oy in offsets:
            for ox in offsets:
                points.append((c + ox, r + oy))
    points = np.array(points, dtype=np.float64)
    n = len(points)
    goals = np.tile(goal, (n, 1))
    policy = policy_from(rp, ap, spec)
    actions = policy(points, goals)
    q = q_values(rp, ap, spec, points, actions, goals)
    done, steps, _ = rollout_batch(policy, spec, points, goals, max_steps=mc_horizon)
    csum = gamma_csum(gamma, mc_horizon)
    ks = np.where(done, steps, mc_horizon)
    mc = -csum[ks]
    return ValueErrorMap(points=points, q=q, mc=mc, error=q - mc, goal=np.asarray(goal))


def episode_trace(
    rp: ReprParams, ap: AgentParams, spec: EnvSpec, task_index: int
) -> EpisodeTrace:
    """Deterministic rollout recording Q and latent distance per step."""
    start, goal = gcenv.sample_eval_task(spec, task_index)
    z_g = rep.encode_goals(rp, spec, goal[None, :])
    states = [start.copy()]
    actions, qs, dists = [], [], []
    s = start
    z_s = rep.encode_states(rp, spec, s[None, :])
    dists.append(float(np.linalg.norm(z_s - z_g)))
    success = gcenv.is_success(s, goal, spec)
    for _ in range(spec.max_episode_len):
        if success:
            break
        a = act_batch(rp, ap, spec, s[None, :], goal[None, :])[0]
        qs.append(float(q_values(rp, ap, spec, s[None, :], a[None, :], goal[None, :])[0]))
        s = gcenv.step(spec, s, a)
        states.append(s.copy())
        actions.append(a)
        z_s = rep.encode_states(rp, spec, s[None, :])
        dists.append(float(np.linalg.norm(z_s - z_g)))
        success = gcenv.is_success(s, goal, spec)
    return EpisodeTrace(
        states=np.array(states),
        actions=np.array(actions) if actions else np.zeros((0, 2)),
        q_values=np.array(qs),
        latent_dists=np.array(dists),
        success=bool(success),
        task_index=task_index,
    )


def goal_dyn_error(
    rp: ReprParams,
    tgt_rp: TargetReprParams,
    spec: EnvSpec,
    ds: OfflineDataset,
    cfg: TrainConfig,
    chunks: int = 1000,
    seed: int = 12345,
) -> float:
    """Mean per-step goal-dynamics error over freshly sampled chunks."""
    rng = np.random.default_rng(seed)
    total = 0.0
    rows = 0
    remaining = chunks
    while remaining > 0:
        take = min(remaining, cfg.chunk_batch)
        batch = sampler.sample_chunk(
            ds, spec, cfg.horizon, cfg.relabel, cfg.gamma,
            cfg.mc_horizon, take, rng,
        )
        _, _, report = rep.repr_loss(
            rp, tgt_rp, spec, batch, LossWeights(),
            closed_loop=cfg.closed_loop_unroll, compute_grads=False,
        )
        total += report["L_gdyn"] / cfg.horizon * take
        rows += take
        remaining -= take
    return total / rows


def goal_dyn_error_vs_success(
    entries: list[tuple[str, ReprParams, TargetReprParams, AgentParams, OfflineDataset]],
    spec: EnvSpec,
    cfg: TrainConfig,
    episodes_per_task: int = 50,
    seed: int = 0,
    chunks: int = 1000,
) -> list[tuple[str, float, float]]:
    """Scatter rows (label, held-out goal-dynamics error, mean success)."""
    if len(entries) < 2:
        raise ContractError("need at least 2 checkpoints for the scatter")
    rows = []
    for label, rp, tgt_rp, ap, ds in entries:
        err = goal_dyn_error(rp, tgt_rp, spec, ds, cfg, chunks=chunks, seed=seed + 7)
        report = evaluate(rp, ap, spec, episodes_per_task, seed)
        rows.append((label, float(err), float(report.mean_success)))
    return rows


# ---------------------------------------------------------------------------
# latent geometry
# ---------------------------------------------------------------------------

def jacobi_eigvals(mat: np.ndarray, max_sweeps: int = 64, tol: float = 1e-14) -> np.ndarray:
    """Eigenvalues of a symmetric matrix via cyclic Jacobi rotations."""
    a = np.array(mat, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ContractError("jacobi_eigvals needs a square matrix")
    scale = max(float(np.abs(a).max()), 1e-300)
    for _ in range(max_sweeps):
        off = np.abs(a - np.diag(np.diag(a))).max()
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol * scale:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))[::-1]


def effective_rank_of_latents(latents: np.ndarray) -> float:
    """exp(entropy) of the normalized singular-value spectrum."""
    z = np.asarray(latents, dtype=np.float64)
    zc = z - z.mean(axis=0, keepdims=True)
    gram = zc.T @ zc
    eig = np.clip(jacobi_eigvals(gram), 0.0, None)
    sv = np.sqrt(eig)
    total = sv.sum()
    if total <= 0.0:
        return 1.0
    p = sv / total
    p = p[p > 0]
    return float(np.exp(-(p * np.log(p)).sum()))


def latent_effective_rank(
    rp: ReprParams, spec: EnvSpec, states: np.ndarray
) -> float:
    states = np.asarray(states, dtype=np.float64)
    if states.shape[0] < rp.d_z:
        raise ContractError(
            f"need at least d_z={rp.d_z} states, got {states.shape[0]}"
        )
    return effective_rank_of_latents(rep.encode_states(rp, spec, states))


def sample_dataset_states(
    ds: OfflineDataset, count: int, rng: np.random.Generator
) -> np.ndarray:
    out = np.empty((count, ds.trajectories[0].states.shape[1]))
    for i in range(count):
        traj = ds.trajectories[rng.integers(len(ds.trajectories))]
        out[i] = traj.states[rng.integers(len(traj.states))]
    return out


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ContractError("spearman needs two equal-length 1-d samples, n >= 2")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        return 0.0
    return float((rx * ry).sum() / denom)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


# ---------------------------------------------------------------------------
# ablation and robustness orchestration
# ---------------------------------------------------------------------------

def run_ablation(
    spec_ab: AblationSpec,
    base_cfg: TrainConfig,
    ds: OfflineDataset,
    spec: EnvSpec,
    episodes_per_task: int = 50,
    eval_seed: int = 0,
) -> tuple[EvalReport, Trainer]:
    """Train one variant from base_cfg and evaluate it."""
    cfg = spec_ab.apply(base_cfg)
    trainer = Trainer(spec, ds, cfg)
    trainer.train()
    report = evaluate(trainer.rp, trainer.ap, spec, episodes_per_task, eval_seed)
    return report, trainer


@dataclass
class RobustCell:
    """One (protocol, setting, variant, seed) training cell."""

    env_id: str
    protocol: str       # "fraction" | "noise" | "stitch"
    variant: str
    sigma: float
    fraction: float
    seed: int


def robustness_cells(spec: EnvSpec, seeds: int = 3) -> list[RobustCell]:
    """The full suite: data fractions, the domain noise grid, and
    navigate-vs-stitch (FULL vs GCBC) comparisons."""
    sigmas = LOCOMOTION_SIGMAS if spec.is_maze else MANIPULATION_SIGMAS
    base_sigma = sigmas[0]
    cells = []
    for seed in range(seeds):
        for fraction in FRACTIONS:
            cells.append(
                RobustCell(spec.env_id, "fraction", "FULL", base_sigma, fraction, seed)
            )
        for sigma in sigmas:
            cells.append(
                RobustCell(spec.env_id, "noise", "FULL", sigma, 1.0, seed)
            )
        if spec.is_maze:
            for variant in ("FULL", "GCBC"):
                cells.append(
                    RobustCell(spec.env_id, "stitch", variant, base_sigma, 1.0, seed)
                )
    return cells


def run_robust_cell(
    cell: RobustCell,
    base_cfg: TrainConfig,
    transitions: int,
    episodes_per_task: int = 50,
    data_seed: int = 7,
) -> dict:
    """Collect (or subsample) the cell's dataset, train, evaluate."""
    spec = gcenv.make_spec(cell.env_id)
    mode = "stitch" if cell.protocol == "stitch" else "navigate"
    ds = datagen.collect(
        spec,
        CollectConfig(
            mode=mode,
            sigma=cell.sigma,
            target_transitions=transitions,
            seed=data_seed,
        ),
    )
    if cell.fraction < 1.0:
        ds = datagen.subsample(ds, cell.fraction, seed=data_seed + 1)
    cfg = replace(base_cfg, seed=cell.seed)
    report, _ = run_ablation(
        AblationSpec(cell.variant), cfg, ds, spec, episodes_per_task, cell.seed
    )
    return {
        "env": cell.env_id,
        "protocol": cell.protocol,
        "variant": cell.variant,
        "sigma": cell.sigma,
        "fraction": cell.fraction,
        "seed": cell.seed,
        "success": report.mean_success,
        "episode_len": report.mean_episode_len,
    }
