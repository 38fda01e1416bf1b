"""Representation learner: shared encoders, five predictive heads, and the
horizon-unrolled multi-scale loss.

The state encoder embeds states and goals into one latent space; a
state-action encoder fuses latents with actions. Five heads supervise the
encoders at two granularities: local forward/inverse dynamics, a cumulative
return predictor, and goal-conditioned dynamics/action predictors. Targets
for latent regression come from a hard-copied target encoder and never
receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gcenv
from .errors import NumericError, ParameterError
from .gcenv import EnvSpec
from .ndmath import ParamSet, Tape, autodiff as ad, hard_copy, mean_sq_diff, mlp_forward, mlp_init
from .sampler import ChunkBatch

HEAD_NAMES = ("f_dyn", "f_inv", "f_gdyn", "f_gact", "f_rew")
NET_NAMES = ("E_s", "E_sa") + HEAD_NAMES


@dataclass
class LossWeights:
    """Non-negative coefficients for the five prediction losses."""

    dyn: float = 1.0
    inv: float = 1.0
    gdyn: float = 1.0
    gact: float = 1.0
    rew: float = 1.0

    def __post_init__(self):
        vals = (self.dyn, self.inv, self.gdyn, self.gact, self.rew)
        if any(v < 0 for v in vals):
            raise ParameterError("loss weights must be >= 0")
        if not any(v > 0 for v in vals):
            raise ParameterError("at least one loss weight must be positive")


@dataclass
class ReprParams:
    """Encoders (E_s, E_sa) and heads, all sharing latent width d_z."""

    e_s: ParamSet
    e_sa: ParamSet
    f_dyn: ParamSet
    f_inv: ParamSet
    f_gdyn: ParamSet
    f_gact: ParamSet
    f_rew: ParamSet
    d_z: int
    activation: str

    def nets(self) -> dict[str, ParamSet]:
        return {
            "E_s": self.e_s,
            "E_sa": self.e_sa,
            "f_dyn": self.f_dyn,
            "f_inv": self.f_inv,
            "f_gdyn": self.f_gdyn,
            "f_gact": self.f_gact,
            "f_rew": self.f_rew,
        }

    def replaced(self, nets: dict[str, ParamSet]) -> "ReprParams":
        cur = self.nets()
        cur.update(nets)
        return ReprParams(
            cur["E_s"], cur["E_sa"], cur["f_dyn"], cur["f_inv"],
            cur["f_gdyn"], cur["f_gact"], cur["f_rew"],
            self.d_z, self.activation,
        )


@dataclass
class TargetReprParams:
    """Frozen encoder copies; replaced only by hard_copy, never updated."""

    e_s: ParamSet
    e_sa: ParamSet
    activation: str


def init_repr(
    rng: np.random.Generator,
    spec: EnvSpec,
    d_z: int = 64,
    hidden: tuple[int, ...] = (128, 128),
    activation: str = "relu",
) -> ReprParams:
    adim = 2
    h = list(hidden)
    return ReprParams(
        e_s=mlp_init(rng, [spec.enc_dim, *h, d_z], "E_s"),
        e_sa=mlp_init(rng, [d_z + adim, *h, d_z], "E_sa"),
        f_dyn=mlp_init(rng, [d_z, *h, d_z], "f_dyn"),
        f_inv=mlp_init(rng, [2 * d_z, *h, adim], "f_inv"),
        f_gdyn=mlp_init(rng, [2 * d_z, *h, d_z], "f_gdyn"),
        f_gact=mlp_init(rng, [2 * d_z, *h, adim], "f_gact"),
        f_rew=mlp_init(rng, [2 * d_z, *h, 1], "f_rew"),
        d_z=d_z,
        activation=activation,
    )


def make_targets(rp: ReprParams) -> TargetReprParams:
    return TargetReprParams(hard_copy(rp.e_s), hard_copy(rp.e_sa), rp.activation)


# ---------------------------------------------------------------------------
# value-level forwards (shared by the agent, diagnostics and tests)
# ---------------------------------------------------------------------------

def encode_states(rp, spec: EnvSpec, states: np.ndarray) -> np.ndarray:
    """z_s for raw states (batched). Also used for goal-shaped state vectors."""
    return mlp_forward(rp.e_s, gcenv.states_to_inputs(spec, states), rp.activation)


def encode_goals(rp, spec: EnvSpec, goals: np.ndarray) -> np.ndarray:
    """z_g = E_s(goal input): goals share the state encoder."""
    return mlp_forward(rp.e_s, gcenv.goals_to_inputs(spec, goals), rp.activation)


def encode_state_action(rp, z_s: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return mlp_forward(
        rp.e_sa, np.concatenate([z_s, actions], axis=1), rp.activation
    )


def predict_forward(rp: ReprParams, z_sa: np.ndarray) -> np.ndarray:
    return mlp_forward(rp.f_dyn, z_sa, rp.activation)


def predict_inverse(rp: ReprParams, z_s: np.ndarray, z_next: np.ndarray) -> np.ndarray:
    return mlp_forward(
        rp.f_inv, np.concatenate([z_s, z_next], axis=1), rp.activation
    )


def predict_goal_dyn(rp: ReprParams, z_s: np.ndarray, z_g: np.ndarray) -> np.ndarray:
    return mlp_forward(
        rp.f_gdyn, np.concatenate([z_s, z_g], axis=1), rp.activation
    )


def predict_goal_act(rp: ReprParams, z_s: np.ndarray, z_g: np.ndarray) -> np.ndarray:
    return mlp_forward(
        rp.f_gact, np.concatenate([z_s, z_g], axis=1), rp.activation
    )


def predict_reward(rp: ReprParams, z_sa: np.ndarray, z_g: np.ndarray) -> np.ndarray:
    return mlp_forward(
        rp.f_rew, np.concatenate([z_sa, z_g], axis=1), rp.activation
    )


# ---------------------------------------------------------------------------
# the multi-scale loss
# ---------------------------------------------------------------------------

def _check_finite(value: float, term: str, h: int) -> None:
    if not np.isfinite(value):
        raise NumericError(f"{term} is not finite at unroll step {h}")


def repr_loss(
    rp: ReprParams,
    targets: TargetReprParams,
    spec: EnvSpec,
    batch: ChunkBatch,
    lw: LossWeights,
    closed_loop: bool = False,
    compute_grads: bool = True,
):
    """Multi-scale loss over an H-step latent unroll.

    Per step h: z_sa = E_sa(z_s, a_h); the target latent comes from the
    frozen target encoder; the five per-step terms are batch/feature means
    of squared errors (Huber is reserved for the critic). The latent is
    carried open-loop (z_{h+1} = f_dyn prediction) unless closed_loop, in
    which case s_{h+1} is re-encoded by the online encoder.

    Returns (total, grads, report): total is the weighted sum across steps,
    grads maps 'net/tensor' to gradient arrays (empty when compute_grads is
    off), and report carries the unweighted per-term sums plus the total.
    Zero-weight terms are still evaluated for the report but stay off the
    tape, so they contribute exactly zero gradient.
    """
    act = rp.activation
    horizon = batch.horizon
    b = batch.states.shape[0]
    tape = Tape()
    z_s = mlp_forward(rp.e_s, gcenv.states_to_inputs(spec, batch.states[:, 0]), act, tape)
    goal_terms_active = lw.gdyn > 0 or lw.gact > 0 or lw.rew > 0
    gin = gcenv.goals_to_inputs(spec, batch.goals)
    if goal_terms_active:
        z_g = mlp_forward(rp.e_s, gin, act, tape)
    else:
        z_g = mlp_forward(rp.e_s, gin, act)

    # all H target latents in one stacked pass through the frozen encoder
    next_states = batch.states[:, 1:].reshape(b * horizon, -1)
    tgt_all = mlp_forward(
        targets.e_s, gcenv.states_to_inputs(spec, next_states), targets.activation
    ).reshape(b, horizon, -1)

    report = {name: 0.0 for name in ("L_dyn", "L_inv", "L_gdyn", "L_gact", "L_rew")}
    weighted: list[ad.Var] = []

    def term(cond_weight, head, inputs, target, label, h):
        """One per-step loss term: taped when weighted, fast otherwise."""
        if cond_weight > 0:
            pred = mlp_forward(head, ad.concat_cols(inputs), act, tape)
            t_var = ad.msd(pred, target)
            value = float(t_var.array)
            _check_finite(value, label, h)
            report[label] += value
            weighted.append(ad.scale(t_var, cond_weight))
            return pred
        arrays = [p.array if isinstance(p, ad.Var) else p for p in inputs]
        pred = mlp_forward(head, np.concatenate(arrays, axis=1), act)
        value = mean_sq_diff(pred, target)
        _check_finite(value, label, h)
        report[label] += value
        return pred

    for h in range(horizon):
        a_h = batch.actions[:, h]
        z_sa = mlp_forward(rp.e_sa, ad.concat_cols([z_s, a_h]), act, tape)
        tgt = np.ascontiguousarray(tgt_all[:, h])
        # forward dynamics also carries the open-loop latent, so it is taped
        # even at weight zero
        pred_dyn = mlp_forward(rp.f_dyn, z_sa, act, tape)
        dyn_var = ad.msd(pred_dyn, tgt)
        dyn_val = float(dyn_var.array)
        _check_finite(dyn_val, "L_dyn", h)
        report["L_dyn"] += dyn_val
        if lw.dyn > 0:
            weighted.append(ad.scale(dyn_var, lw.dyn))

        term(lw.inv, rp.f_inv, [z_s, tgt], a_h, "L_inv", h)
        term(lw.gdyn, rp.f_gdyn, [z_s, z_g], tgt, "L_gdyn", h)
        term(lw.gact, rp.f_gact, [z_s, z_g], a_h, "L_gact", h)
        term(lw.rew, rp.f_rew, [z_sa, z_g], batch.mc_returns[:, h: h + 1], "L_rew", h)

        if h + 1 < horizon:
            if closed_loop:
                z_s = mlp_forward(
                    rp.e_s,
                    gcenv.states_to_inputs(spec, batch.states[:, h + 1]),
                    act,
                    tape,
                )
            else:
                z_s = pred_dyn

    total_var = weighted[0]
    for w in weighted[1:]:
        total_var = ad.add(total_var, w)
    total = float(total_var.array)
    report["total"] = total
    grads: dict[str, np.ndarray] = {}
    if compute_grads:
        grads = tape.gradients(total_var)
    return total, grads, report
