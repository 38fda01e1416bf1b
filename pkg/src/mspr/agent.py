"""Goal-conditioned actor-critic over the latent space, plus the training loop.

The critic regresses onto clipped n-step TD targets with a Huber loss; the
actor maximizes normalized Q while cloning dataset actions. RL updates never
touch the representation: latents enter the RL losses gradient-stopped
(flow-through is available as an explicit ablation flag). Representation
and target refreshes happen every K steps, actor/critic updates every step.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np

from . import gcenv, representation as rep, sampler
from .datagen import OfflineDataset
from .errors import ContractError, NumericError, ParameterError
from .gcenv import EnvSpec
from .ndmath import (
    AdamState,
    ParamSet,
    Tape,
    Tensor,
    adam_step,
    autodiff as ad,
    hard_copy,
    load_tensors,
    mlp_forward,
    mlp_init,
    save_tensors,
)
from .representation import LossWeights, ReprParams, TargetReprParams
from .sampler import NStepBatch, RelabelStrategy


@dataclass
class AgentParams:
    actor: ParamSet
    critic: ParamSet
    critic2: ParamSet | None = None


@dataclass
class TargetAgentParams:
    actor: ParamSet
    critic: ParamSet
    critic2: ParamSet | None = None


@dataclass
class TrainConfig:
    total_steps: int = 30_000
    target_period: int = 100      # K: target refresh + representation trigger
    repr_updates: int = 10        # R: chunk updates per trigger
    horizon: int = 5              # H: unroll length
    nstep: int = 3
    gamma: float = 0.99
    lambda_bc: float = 1.0
    rl_batch: int = 256
    chunk_batch: int = 64
    loss_weights: LossWeights = field(default_factory=LossWeights)
    relabel: RelabelStrategy = field(default_factory=RelabelStrategy)
    seed: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mc_horizon: int = 200
    d_z: int = 64
    hidden: tuple[int, ...] = (128, 128)
    activation: str = "relu"
    repr_enabled: bool = True        # off: frozen random encoder (GCBC/controls)
    critic_enabled: bool = True
    actor_q_enabled: bool = True     # off: behavioral cloning only
    twin_critic: bool = False
    encoder_rl_grads: bool = False   # ablation: let RL losses reach the encoder
    closed_loop_unroll: bool = False
    clip_targets: bool = True
    bootstrap_source: str = "target_actor"  # or "dataset" (SARSA-style)

    def __post_init__(self):
        for name in ("total_steps", "target_period", "repr_updates", "horizon", "nstep"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ParameterError("gamma must lie in (0, 1)")
        if self.lambda_bc < 0:
            raise ParameterError("lambda_bc must be >= 0")
        if self.bootstrap_source not in ("target_actor", "dataset"):
            raise ParameterError(f"unknown bootstrap source {self.bootstrap_source!r}")
        if self.twin_critic and self.encoder_rl_grads:
            raise ParameterError("twin_critic and encoder_rl_grads cannot be combined")

    def min_return(self) -> float:
        return -1.0 / (1.0 - self.gamma)


def init_agent(
    rng: np.random.Generator,
    d_z: int,
    hidden: tuple[int, ...],
    twin_critic: bool = False,
) -> AgentParams:
    h = list(hidden)
    actor = mlp_init(rng, [2 * d_z, *h, 2], "actor")
    critic = mlp_init(rng, [2 * d_z, *h, 1], "critic")
    critic2 = mlp_init(rng, [2 * d_z, *h, 1], "critic2") if twin_critic else None
    return AgentParams(actor, critic, critic2)


def agent_targets(ap: AgentParams) -> TargetAgentParams:
    return TargetAgentParams(
        hard_copy(ap.actor),
        hard_copy(ap.critic),
        hard_copy(ap.critic2) if ap.critic2 is not None else None,
    )


# ---------------------------------------------------------------------------
# acting and single updates
# ---------------------------------------------------------------------------

def act(
    rp: ReprParams, ap: AgentParams, spec: EnvSpec, s: np.ndarray, g: np.ndarray
) -> np.ndarray:
    """Deterministic policy action in [-1, 1]^2."""
    return act_batch(rp, ap, spec, np.asarray(s)[None, :], np.asarray(g)[None, :])[0]


def act_batch(rp, ap, spec, states, goals) -> np.ndarray:
    z_s = rep.encode_states(rp, spec, states)
    z_g = rep.encode_goals(rp, spec, goals)
    u = mlp_forward(ap.actor, np.concatenate([z_s, z_g], axis=1), rp.activation)
    return np.tanh(u)


def q_values(rp, ap, spec, states, actions, goals) -> np.ndarray:
    """Critic readout Q(z_sa, z_g) for raw inputs (no gradients)."""
    z_s = rep.encode_states(rp, spec, states)
    z_g = rep.encode_goals(rp, spec, goals)
    z_sa = rep.encode_state_action(rp, z_s, actions)
    q = mlp_forward(ap.critic, np.concatenate([z_sa, z_g], axis=1), rp.activation)
    return q[:, 0]


def _subgrads(grads: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in grads.items() if k.startswith(prefix + "/")}


def encode_batch_latents(rp: ReprParams, spec: EnvSpec, batch: NStepBatch):
    """Gradient-free (z_s, z_g, z_boot) for one batch, stacked into a single
    encoder pass and shared by both RL updates."""
    b = batch.states.shape[0]
    stacked = np.concatenate(
        [
            gcenv.states_to_inputs(spec, batch.states),
            gcenv.goals_to_inputs(spec, batch.goals),
            gcenv.states_to_inputs(spec, batch.bootstrap_states),
        ],
        axis=0,
    )
    z = mlp_forward(rp.e_s, stacked, rp.activation)
    return z[:b], z[b: 2 * b], z[2 * b:]


def critic_update(
    rp: ReprParams,
    ap: AgentParams,
    tgt_ap: TargetAgentParams,
    spec: EnvSpec,
    batch: NStepBatch,
    cfg: TrainConfig,
    opts: dict[str, AdamState],
    latents=None,
):
    """One TD step on the critic; encoders receive no gradients by default.

    Target: y = R + m * gamma^n * Q_target(z'_sa, z_g) with the bootstrap
    action from the target actor (or from the dataset in SARSA mode),
    clipped to the feasible return range when clip_targets is on.
    """
    act_name = rp.activation
    tape = Tape() if cfg.encoder_rl_grads else None
    if latents is None:
        latents = encode_batch_latents(rp, spec, batch)
    z_s_det, z_g_det, z_b = latents
    if cfg.bootstrap_source == "dataset":
        if batch.bootstrap_actions is None:
            raise ContractError("dataset bootstrap requires bootstrap_actions")
        a_boot = batch.bootstrap_actions
    else:
        a_boot = np.tanh(
            mlp_forward(
                tgt_ap.actor, np.concatenate([z_b, z_g_det], axis=1), act_name
            )
        )
    z_sab = rep.encode_state_action(rp, z_b, a_boot)
    qin_b = np.concatenate([z_sab, z_g_det], axis=1)
    q_next = mlp_forward(tgt_ap.critic, qin_b, act_name)[:, 0]
    if cfg.twin_critic and tgt_ap.critic2 is not None:
        q_next = np.minimum(
            q_next, mlp_forward(tgt_ap.critic2, qin_b, act_name)[:, 0]
        )
    y = batch.returns + batch.masks * (cfg.gamma ** cfg.nstep) * q_next
    if cfg.clip_targets:
        y = np.clip(y, cfg.min_return(), 0.0)
    if not np.all(np.isfinite(y)):
        raise NumericError("critic TD target contains NaN/Inf")

    if tape is None:
        z_sa = rep.encode_state_action(rp, z_s_det, batch.actions)
        qin = np.concatenate([z_sa, z_g_det], axis=1)
        tape = Tape()
        q = mlp_forward(ap.critic, qin, act_name, tape)
    else:
        z_s_v = mlp_forward(
            rp.e_s, gcenv.states_to_inputs(spec, batch.states), act_name, tape
        )
        z_g_v = mlp_forward(
            rp.e_s, gcenv.goals_to_inputs(spec, batch.goals), act_name, tape
        )
        z_sa_v = mlp_forward(
            rp.e_sa, ad.concat_cols([z_s_v, batch.actions]), act_name, tape
        )
        q = mlp_forward(
            ap.critic, ad.concat_cols([z_sa_v, z_g_v]), act_name, tape
        )
    loss_var = ad.huber(q, y[:, None], 1.0)
    if cfg.twin_critic and ap.critic2 is not None:
        q2 = mlp_forward(ap.critic2, qin, act_name, tape)
        loss_var = ad.add(loss_var, ad.huber(q2, y[:, None], 1.0))
    grads = tape.gradients(loss_var)

    hyper = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    new_critic, opts["critic"] = adam_step(
        ap.critic, _subgrads(grads, "critic"), opts["critic"], **hyper
    )
    new_critic2 = ap.critic2
    if cfg.twin_critic and ap.critic2 is not None:
        new_critic2, opts["critic2"] = adam_step(
            ap.critic2, _subgrads(grads, "critic2"), opts["critic2"], **hyper
        )
    new_rp = rp
    if cfg.encoder_rl_grads:
        new_nets = {}
        for net in ("E_s", "E_sa"):
            ps = rp.nets()[net]
            new_nets[net], opts[net] = adam_step(
                ps, _subgrads(grads, net), opts[net], **hyper
            )
        new_rp = rp.replaced(new_nets)
    stats = {
        "critic_loss": float(loss_var.array),
        "mean_q": float(q.array.mean()),
        "mean_target": float(y.mean()),
    }
    return AgentParams(ap.actor, new_critic, new_critic2), new_rp, stats


def actor_update(
    rp: ReprParams,
    ap: AgentParams,
    spec: EnvSpec,
    batch: NStepBatch,
    cfg: TrainConfig,
    opts: dict[str, AdamState],
    latents=None,
):
    """One actor step: -mean(Q)/mean|Q| (detached norm) + BC regression.

    Latents are detached; gradients flow through E_sa and the critic into
    the actor only. With actor_q_enabled off the update is pure BC.
    """
    act_name = rp.activation
    if latents is None:
        latents = encode_batch_latents(rp, spec, batch)
    z_s, z_g = latents[0], latents[1]
    tape = Tape()
    u = mlp_forward(ap.actor, np.concatenate([z_s, z_g], axis=1), act_name, tape)
    a_pi = ad.tanh(u)
    bc_var = ad.msd(a_pi, batch.actions)
    q_term_value = 0.0
    if cfg.actor_q_enabled:
        z_sa = mlp_forward(
            rp.e_sa, ad.concat_cols([z_s, a_pi]), act_name, tape, trainable=False
        )
        q = mlp_forward(
            ap.critic, ad.concat_cols([z_sa, z_g]), act_name, tape, trainable=False
        )
        norm = float(np.abs(q.array).mean()) + 1e-6
        q_term = ad.scale(ad.mean_all(q), -1.0 / norm)
        q_term_value = float(q_term.array)
        loss_var = ad.add(q_term, ad.scale(bc_var, cfg.lambda_bc))
    else:
        loss_var = ad.scale(bc_var, cfg.lambda_bc)
    grads = tape.gradients(loss_var)
    hyper = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    new_actor, opts["actor"] = adam_step(
        ap.actor, _subgrads(grads, "actor"), opts["actor"], **hyper
    )
    stats = {
        "actor_loss": float(loss_var.array),
        "actor_bc": float(bc_var.array),
        "actor_q_term": q_term_value,
    }
    return AgentParams(new_actor, ap.critic, ap.critic2), stats


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

METRICS_COLUMNS = ("step", "critic_loss", "actor_loss", "mean_q", "repr_total", "actor_bc")
REPR_COLUMNS = ("step", "L_dyn", "L_inv", "L_gdyn", "L_gact", "L_rew", "total")


def config_hash(text: str) -> tuple[int, int]:
    """Stable 64-bit digest of a resolved config, split into two u32 halves."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    value = int.from_bytes(digest[:8], "little")
    return value >> 32, value & 0xFFFFFFFF


class Trainer:
    """Owns all mutable parameters and optimizer state for one run.

    Batches at step t are drawn from generators seeded by (seed, t, stream),
    so a checkpoint resumed at step t reproduces the exact continuation.
    """

    def __init__(
        self,
        spec: EnvSpec,
        ds: OfflineDataset,
        cfg: TrainConfig,
        cfg_digest: tuple[int, int] = (0, 0),
    ):
        if ds.env_id != spec.env_id:
            raise ContractError(
                f"dataset env {ds.env_id!r} does not match spec {spec.env_id!r}"
            )
        self.spec = spec
        self.ds = ds
        self.cfg = cfg
        self.cfg_digest = cfg_digest
        rng = np.random.default_rng((cfg.seed, 0))
        self.rp = rep.init_repr(rng, spec, cfg.d_z, cfg.hidden, cfg.activation)
        self.tgt_rp = rep.make_targets(self.rp)
        self.ap = init_agent(rng, cfg.d_z, cfg.hidden, cfg.twin_critic)
        self.tgt_ap = agent_targets(self.ap)
        self.opts = {n: AdamState.init(ps) for n, ps in self.rp.nets().items()}
        self.opts["actor"] = AdamState.init(self.ap.actor)
        self.opts["critic"] = AdamState.init(self.ap.critic)
        if self.ap.critic2 is not None:
            self.opts["critic2"] = AdamState.init(self.ap.critic2)
        self.step = 0
        self.repr_update_count = 0
        self.last_repr_total = float("nan")

    # -- stepping ---------------------------------------------------------

    def _refresh_targets(self) -> None:
        self.tgt_rp = rep.make_targets(self.rp)
        self.tgt_ap = agent_targets(self.ap)

    def _repr_step(self, t: int, r: int, repr_rows: list | None) -> None:
        rng = np.random.default_rng((self.cfg.seed, t, 100 + r))
        chunk = sampler.sample_chunk(
            self.ds, self.spec, self.cfg.horizon, self.cfg.relabel,
            self.cfg.gamma, self.cfg.mc_horizon, self.cfg.chunk_batch, rng,
        )
        total, grads, report = rep.repr_loss(
            self.rp, self.tgt_rp, self.spec, chunk, self.cfg.loss_weights,
            closed_loop=self.cfg.closed_loop_unroll,
        )
        hyper = dict(
            lr=self.cfg.lr, beta1=self.cfg.beta1,
            beta2=self.cfg.beta2, eps=self.cfg.eps,
        )
        new_nets = {}
        for net, ps in self.rp.nets().items():
            new_nets[net], self.opts[net] = adam_step(
                ps, _subgrads(grads, net), self.opts[net], **hyper
            )
        self.rp = self.rp.replaced(new_nets)
        self.repr_update_count += 1
        self.last_repr_total = total
        if repr_rows is not None:
            repr_rows.append(
                (t, report["L_dyn"], report["L_inv"], report["L_gdyn"],
                 report["L_gact"], report["L_rew"], total)
            )

    def train_step(self, t: int, repr_rows: list | None = None) -> dict:
        try:
            if t % self.cfg.target_period == 0:
                self._refresh_targets()
                if self.cfg.repr_enabled:
                    for r in range(self.cfg.repr_updates):
                        self._repr_step(t, r, repr_rows)
            rng = np.random.default_rng((self.cfg.seed, t, 1))
            batch = sampler.nstep_batch(
                self.ds, self.spec, self.cfg.nstep, self.cfg.gamma,
                self.cfg.relabel, self.cfg.rl_batch, rng,
                with_bootstrap_actions=self.cfg.bootstrap_source == "dataset",
            )
            stats = {"critic_loss": float("nan"), "mean_q": float("nan")}
            latents = encode_batch_latents(self.rp, self.spec, batch)
            if self.cfg.critic_enabled:
                self.ap, self.rp, cstats = critic_update(
                    self.rp, self.ap, self.tgt_ap, self.spec, batch,
                    self.cfg, self.opts, latents=latents,
                )
                stats.update(cstats)
                if self.cfg.encoder_rl_grads:
                    latents = encode_batch_latents(self.rp, self.spec, batch)
            self.ap, astats = actor_update(
                self.rp, self.ap, self.spec, batch, self.cfg, self.opts,
                latents=latents,
            )
            stats.update(astats)
        except NumericError as exc:
            raise NumericError(f"step {t}: {exc}") from exc
        stats["step"] = t
        stats["repr_total"] = self.last_repr_total
        self.step = t
        return stats

    def train(
        self,
        metrics_rows: list | None = None,
        repr_rows: list | None = None,
        progress=None,
    ) -> None:
        for t in range(self.step + 1, self.cfg.total_steps + 1):
            stats = self.train_step(t, repr_rows)
            if metrics_rows is not None:
                metrics_rows.append(
                    (t, stats["critic_loss"], stats["actor_loss"],
                     stats["mean_q"], stats["repr_total"], stats["actor_bc"])
                )
            if progress is not None:
                progress(t, stats)

    # -- checkpointing ------------------------------------------------------

    _ENV_INDEX = {name: i for i, name in enumerate(gcenv.ENV_IDS)}
    _ACT_INDEX = {"relu": 0, "tanh": 1}

    def checkpoint_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for net, ps in self.rp.nets().items():
            for name, tensor in ps.items():
                out[f"repr/{net}/{name}"] = tensor
        for net, ps in (("E_s", self.tgt_rp.e_s), ("E_sa", self.tgt_rp.e_sa)):
            for name, tensor in ps.items():
                out[f"repr_target/{net}/{name}"] = tensor
        agent_nets = {"actor": self.ap.actor, "critic": self.ap.critic}
        if self.ap.critic2 is not None:
            agent_nets["critic2"] = self.ap.critic2
        for net, ps in agent_nets.items():
            for name, tensor in ps.items():
                out[f"agent/{net}/{name}"] = tensor
        tgt_nets = {"actor": self.tgt_ap.actor, "critic": self.tgt_ap.critic}
        if self.tgt_ap.critic2 is not None:
            tgt_nets["critic2"] = self.tgt_ap.critic2
        for net, ps in tgt_nets.items():
            for name, tensor in ps.items():
                out[f"agent_target/{net}/{name}"] = tensor
        for key, state in self.opts.items():
            for name, tensor in state.m.items():
                out[f"opt/{key}/m/{name}"] = tensor
            for name, tensor in state.v.items():
                out[f"opt/{key}/v/{name}"] = tensor
            out[f"opt/{key}/t"] = Tensor(np.array([float(state.step)]))
        out["meta/step"] = Tensor(np.array([float(self.step)]))
        out["meta/env"] = Tensor(np.array([float(self._ENV_INDEX[self.spec.env_id])]))
        out["meta/activation"] = Tensor(
            np.array([float(self._ACT_INDEX[self.cfg.activation])])
        )
        out["meta/d_z"] = Tensor(np.array([float(self.cfg.d_z)]))
        out["meta/config_hash_hi"] = Tensor(np.array([float(self.cfg_digest[0])]))
        out["meta/config_hash_lo"] = Tensor(np.array([float(self.cfg_digest[1])]))
        return out

    def save(self, path) -> None:
        save_tensors(path, self.checkpoint_tensors())

    @classmethod
    def restore(
        cls,
        path,
        ds: OfflineDataset,
        cfg: TrainConfig,
        spec: EnvSpec | None = None,
    ) -> "Trainer":
        """Rebuild a trainer that resumes bitwise-identically under cfg.seed."""
        bundle = load_checkpoint(path)
        if spec is None:
            spec = bundle.spec
        trainer = cls(spec, ds, cfg, bundle.cfg_digest)
        trainer.rp = bundle.rp
        trainer.tgt_rp = bundle.tgt_rp
        trainer.ap = bundle.ap
        trainer.tgt_ap = bundle.tgt_ap
        trainer.opts = bundle.opts
        trainer.step = bundle.step
        trainer.repr_update_count = (
            cfg.repr_updates * (bundle.step // cfg.target_period)
            if cfg.repr_enabled else 0
        )
        return trainer


@dataclass
class CheckpointBundle:
    """Parameters, targets, optimizer states and metadata from one file."""

    spec: EnvSpec
    rp: ReprParams
    tgt_rp: TargetReprParams
    ap: AgentParams
    tgt_ap: TargetAgentParams
    opts: dict[str, AdamState]
    step: int
    cfg_digest: tuple[int, int]
    activation: str
    d_z: int


def _group(tensors: dict[str, Tensor], prefix: str) -> dict[str, dict[str, Tensor]]:
    nets: dict[str, dict[str, Tensor]] = {}
    plen = len(prefix) + 1
    for key, tensor in tensors.items():
        if not key.startswith(prefix + "/"):
            continue
        net, name = key[plen:].split("/", 1)
        nets.setdefault(net, {})[name] = tensor
    return nets


def _ordered_paramset(name: str, tensors: dict[str, Tensor]) -> ParamSet:
    layers = len(tensors) // 2
    items = []
    for i in range(layers):
        items.append((f"w{i}", tensors[f"w{i}"]))
        items.append((f"b{i}", tensors[f"b{i}"]))
    return ParamSet(name, items)


def load_checkpoint(path) -> CheckpointBundle:
    tensors = load_tensors(path)
    env_idx = int(tensors["meta/env"].array[0])
    spec = gcenv.make_spec(gcenv.ENV_IDS[env_idx])
    activation = ("relu", "tanh")[int(tensors["meta/activation"].array[0])]
    d_z = int(tensors["meta/d_z"].array[0])

    repr_nets = {
        n: _ordered_paramset(n, ts) for n, ts in _group(tensors, "repr").items()
    }
    rp = ReprParams(
        repr_nets["E_s"], repr_nets["E_sa"], repr_nets["f_dyn"],
        repr_nets["f_inv"], repr_nets["f_gdyn"], repr_nets["f_gact"],
        repr_nets["f_rew"], d_z, activation,
    )
    tgt_nets = {
        n: _ordered_paramset(n, ts)
        for n, ts in _group(tensors, "repr_target").items()
    }
    tgt_rp = TargetReprParams(tgt_nets["E_s"], tgt_nets["E_sa"], activation)
    ag = {n: _ordered_paramset(n, ts) for n, ts in _group(tensors, "agent").items()}
    ap = AgentParams(ag["actor"], ag["critic"], ag.get("critic2"))
    tg = {
        n: _ordered_paramset(n, ts)
        for n, ts in _group(tensors, "agent_target").items()
    }
    tgt_ap = TargetAgentParams(tg["actor"], tg["critic"], tg.get("critic2"))

    opts: dict[str, AdamState] = {}
    opt_group: dict[str, dict[str, Tensor]] = {}
    for key, tensor in tensors.items():
        if key.startswith("opt/"):
            opt_group.setdefault(key.split("/")[1], {})[key] = tensor
    for net, ts in opt_group.items():
        m = {k.split("/", 3)[3]: v for k, v in ts.items() if f"opt/{net}/m/" in k}
        v = {k.split("/", 3)[3]: v for k, v in ts.items() if f"opt/{net}/v/" in k}
        step = int(ts[f"opt/{net}/t"].array[0])
        opts[net] = AdamState(m, v, step)

    return CheckpointBundle(
        spec=spec,
        rp=rp,
        tgt_rp=tgt_rp,
        ap=ap,
        tgt_ap=tgt_ap,
        opts=opts,
        step=int(tensors["meta/step"].array[0]),
        cfg_digest=(
            int(tensors["meta/config_hash_hi"].array[0]),
            int(tensors["meta/config_hash_lo"].array[0]),
        ),
        activation=activation,
        d_z=d_z,
    )
