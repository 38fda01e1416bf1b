"""Command-line entry point and experiment orchestration.

Subcommands: gen-data, train, eval, ablate, robust, diag, layout. Options
resolve as defaults < `key=value` config file < explicit flags; every run
writes the full effective configuration (`config.resolved`) and an input
digest manifest (`manifest.txt`) next to its outputs. Exit codes: 0 ok,
1 usage error, 2 runtime/numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import multiprocessing
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, datagen, evalkit, gcenv, svgplot
from .agent import (
    METRICS_COLUMNS,
    REPR_COLUMNS,
    TrainConfig,
    Trainer,
    config_hash,
    load_checkpoint,
)
from .errors import MsprError, ParameterError
from .evalkit import AblationSpec, EvalReport
from .representation import LossWeights
from .sampler import RelabelStrategy


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"expected boolean, got {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in str(text).split(",") if p != "")


# key -> (parser, default); defaults of None mean "required if used"
CONFIG_SCHEMA = {
    "env": (str, None),
    "data": (str, None),
    "out": (str, None),
    "seed": (int, None),
    "steps": (int, None),
    "k": (int, 100),
    "r": (int, 10),
    "horizon": (int, 5),
    "nstep": (int, 3),
    "gamma": (float, 0.99),
    "lambda_bc": (float, 1.0),
    "rl_batch": (int, 256),
    "chunk_batch": (int, 64),
    "lr": (float, 3e-4),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "eps": (float, 1e-8),
    "mc_horizon": (int, 200),
    "d_z": (int, 64),
    "hidden": (_parse_ints, (128, 128)),
    "activation": (str, "relu"),
    "variant": (str, "FULL"),
    "lw_dyn": (float, 1.0),
    "lw_inv": (float, 1.0),
    "lw_gdyn": (float, 1.0),
    "lw_gact": (float, 1.0),
    "lw_rew": (float, 1.0),
    "relabel_future": (float, 0.5),
    "relabel_random": (float, 0.3),
    "relabel_current": (float, 0.2),
    "relabel_geo": (float, 0.2),
    "clip_targets": (_parse_bool, True),
    "twin_critic": (_parse_bool, False),
    "encoder_rl_grads": (_parse_bool, False),
    "closed_loop_unroll": (_parse_bool, False),
    "bootstrap": (str, "target_actor"),
    "eval_episodes": (int, 50),
    "eval_seed": (int, 0),
    "mode": (str, "navigate"),
    "sigma": (float, 0.0),
    "n": (int, None),
    "l_frag": (int, 4),
    "transitions": (int, None),
    "seeds": (str, "0,1,2"),
    "jobs": (int, 1),
    "task": (int, 4),
    "grid_resolution": (int, 1),
}

_COMMON_KEYS = ("seed", "out")
_TRAIN_KEYS = (
    "env", "data", "steps", "k", "r", "horizon", "nstep", "gamma",
    "lambda_bc", "rl_batch", "chunk_batch", "lr", "beta1", "beta2", "eps",
    "mc_horizon", "d_z", "hidden", "activation", "variant",
    "lw_dyn", "lw_inv", "lw_gdyn", "lw_gact", "lw_rew",
    "relabel_future", "relabel_random", "relabel_current", "relabel_geo",
    "clip_targets", "twin_critic", "encoder_rl_grads", "closed_loop_unroll",
    "bootstrap", "eval_episodes", "eval_seed",
)
COMMAND_KEYS = {
    "gen-data": _COMMON_KEYS + ("env", "mode", "sigma", "n", "l_frag"),
    "train": _COMMON_KEYS + _TRAIN_KEYS,
    "eval": _COMMON_KEYS + ("env", "eval_episodes", "eval_seed"),
    "ablate": _COMMON_KEYS + _TRAIN_KEYS + ("seeds",),
    "robust": _COMMON_KEYS + _TRAIN_KEYS + ("seeds", "transitions", "jobs"),
    "diag": _COMMON_KEYS + _TRAIN_KEYS + ("task", "grid_resolution"),
    "layout": ("env", "out"),
}

_DEFAULT_STEPS = {
    "pointmaze_medium": 30_000,
    "pointmaze_large": 60_000,
    "pushbox": 60_000,
}
_DEFAULT_TRANSITIONS = {
    "pointmaze_medium": 50_000,
    "pointmaze_large": 100_000,
    "pushbox": 100_000,
}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def read_config_file(path, allowed: tuple[str, ...]) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParameterError(f"{path} line {lineno}: expected key=value")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in CONFIG_SCHEMA:
            raise ParameterError(f"{path} line {lineno}: unknown key {key!r}")
        if key not in allowed:
            raise ParameterError(
                f"{path} line {lineno}: key {key!r} not valid for this command"
            )
        parser_fn = CONFIG_SCHEMA[key][0]
        values[key] = parser_fn(raw.strip())
    return values


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags, restricted to the command."""
    keys = COMMAND_KEYS[command]
    resolved = {k: CONFIG_SCHEMA[k][1] for k in keys}
    if getattr(args, "config", None):
        resolved.update(read_config_file(args.config, keys))
    for key in keys:
        flag_val = getattr(args, key.replace("-", "_"), None)
        if flag_val is not None:
            resolved[key] = CONFIG_SCHEMA[key][0](flag_val)
    if "seed" in resolved and resolved["seed"] is None:
        resolved["seed"] = int(os.environ.get("MSPR_SEED", "0"))
    return resolved


def train_config_from(resolved: dict) -> TrainConfig:
    lw = LossWeights(
        resolved["lw_dyn"], resolved["lw_inv"], resolved["lw_gdyn"],
        resolved["lw_gact"], resolved["lw_rew"],
    )
    relabel = RelabelStrategy(
        resolved["relabel_future"], resolved["relabel_random"],
        resolved["relabel_current"], resolved["relabel_geo"],
    )
    cfg = TrainConfig(
        total_steps=resolved["steps"],
        target_period=resolved["k"],
        repr_updates=resolved["r"],
        horizon=resolved["horizon"],
        nstep=resolved["nstep"],
        gamma=resolved["gamma"],
        lambda_bc=resolved["lambda_bc"],
        rl_batch=resolved["rl_batch"],
        chunk_batch=resolved["chunk_batch"],
        loss_weights=lw,
        relabel=relabel,
        seed=resolved["seed"],
        lr=resolved["lr"],
        beta1=resolved["beta1"],
        beta2=resolved["beta2"],
        eps=resolved["eps"],
        mc_horizon=resolved["mc_horizon"],
        d_z=resolved["d_z"],
        hidden=tuple(resolved["hidden"]),
        activation=resolved["activation"],
        clip_targets=resolved["clip_targets"],
        twin_critic=resolved["twin_critic"],
        encoder_rl_grads=resolved["encoder_rl_grads"],
        closed_loop_unroll=resolved["closed_loop_unroll"],
        bootstrap_source=resolved["bootstrap"],
    )
    return AblationSpec(resolved["variant"]).apply(cfg)


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------

def resolved_text(resolved: dict) -> str:
    return "\n".join(
        f"{k}={_format_value(v)}" for k, v in sorted(resolved.items())
        if v is not None
    ) + "\n"


def write_sidecars(out_dir: Path, resolved: dict, inputs: list) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(resolved_text(resolved))
    lines = [f"version={__version__}", f"seed={resolved.get('seed', 0)}"]
    for path in inputs:
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        lines.append(f"input:{Path(path).name}=sha256:{digest}")
    (out_dir / "manifest.txt").write_text("\n".join(sorted(lines)) + "\n")


def _write_csv(path: Path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_eval_csv(path: Path, report: EvalReport) -> None:
    cols = [f"task{i}" for i in range(5)] + [
        "mean_success", "mean_episode_len", "seed",
    ]
    row = list(report.per_task) + [
        report.mean_success, report.mean_episode_len, report.seed,
    ]
    _write_csv(path, cols, [row])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(resolved: dict) -> int:
    spec = gcenv.make_spec(resolved["env"])
    if resolved["n"] is None:
        resolved["n"] = _DEFAULT_TRANSITIONS[spec.env_id]
    out = Path(resolved["out"])
    cfg = datagen.CollectConfig(
        mode=resolved["mode"],
        sigma=resolved["sigma"],
        target_transitions=resolved["n"],
        l_frag=resolved["l_frag"],
        seed=resolved["seed"],
    )
    ds = datagen.collect(spec, cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    datagen.save(ds, out)
    write_sidecars(out.parent, resolved, [])
    print(
        f"wrote {out}: {len(ds.trajectories)} trajectories, "
        f"{ds.total_transitions()} transitions"
    )
    return 0


def _train_once(resolved: dict, ds, spec, seed: int, out_dir: Path, tag: str = ""):
    run_resolved = dict(resolved)
    run_resolved["seed"] = seed
    cfg = replace(train_config_from(run_resolved), seed=seed)
    digest = config_hash(resolved_text(run_resolved))
    trainer = Trainer(spec, ds, cfg, digest)
    metrics_rows: list = []
    repr_rows: list = []
    trainer.train(metrics_rows, repr_rows)
    suffix = f"_{tag}" if tag else ""
    trainer.save(out_dir / f"checkpoint{suffix}.mspr")
    _write_csv(out_dir / f"metrics{suffix}.csv", METRICS_COLUMNS, metrics_rows)
    _write_csv(out_dir / f"repr_losses{suffix}.csv", REPR_COLUMNS, repr_rows)
    report = evalkit.evaluate(
        trainer.rp, trainer.ap, spec,
        resolved["eval_episodes"], resolved["eval_seed"],
    )
    _write_eval_csv(out_dir / f"eval{suffix}.csv", report)
    return trainer, report


def cmd_train(resolved: dict) -> int:
    spec = gcenv.make_spec(resolved["env"])
    if resolved["steps"] is None:
        resolved["steps"] = _DEFAULT_STEPS[spec.env_id]
    ds = datagen.load(resolved["data"])
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_sidecars(out_dir, resolved, [resolved["data"]])
    _, report = _train_once(resolved, ds, spec, resolved["seed"], out_dir)
    print(
        f"trained {resolved['variant']} on {spec.env_id}: "
        f"mean success {report.mean_success:.3f}"
    )
    return 0


def cmd_eval(resolved: dict) -> int:
    bundle = load_checkpoint(resolved["ckpt"])
    spec = bundle.spec
    if resolved["env"] is not None and resolved["env"] != spec.env_id:
        raise ParameterError(
            f"checkpoint is for {spec.env_id}, not {resolved['env']}"
        )
    report = evalkit.evaluate(
        bundle.rp, bundle.ap, spec,
        resolved["eval_episodes"], resolved["eval_seed"],
    )
    out_dir = Path(resolved["out"])
    write_sidecars(out_dir, resolved, [resolved["ckpt"]])
    _write_eval_csv(out_dir / "report.csv", report)
    print(f"mean success {report.mean_success:.3f}")
    return 0


RESULT_COLUMNS = (
    "env", "protocol", "variant", "sigma", "fraction", "seed",
    "success", "episode_len",
)


def cmd_ablate(resolved: dict) -> int:
    spec = gcenv.make_spec(resolved["env"])
    if resolved["steps"] is None:
        resolved["steps"] = _DEFAULT_STEPS[spec.env_id]
    ds = datagen.load(resolved["data"])
    sigma = float(ds.metadata.get("sigma", "0"))
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_sidecars(out_dir, resolved, [resolved["data"]])
    rows = []
    for seed in _parse_ints(resolved["seeds"]):
        _, report = _train_once(
            resolved, ds, spec, seed, out_dir, tag=f"seed{seed}"
        )
        rows.append(
            (spec.env_id, "ablation", resolved["variant"], sigma, 1.0, seed,
             report.mean_success, report.mean_episode_len)
        )
        print(
            f"{resolved['variant']} seed {seed}: "
            f"success {report.mean_success:.3f}"
        )
    _write_csv(out_dir / "results.csv", RESULT_COLUMNS, rows)
    return 0


def _robust_worker(payload):
    cell, resolved = payload
    base_cfg = train_config_from(resolved)
    row = evalkit.run_robust_cell(
        cell, base_cfg, resolved["transitions"], resolved["eval_episodes"],
    )
    return row


def cmd_robust(resolved: dict) -> int:
    spec = gcenv.make_spec(resolved["env"])
    if resolved["steps"] is None:
        resolved["steps"] = _DEFAULT_STEPS[spec.env_id]
    if resolved["transitions"] is None:
        resolved["transitions"] = _DEFAULT_TRANSITIONS[spec.env_id]
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_sidecars(out_dir, resolved, [])
    seeds = _parse_ints(resolved["seeds"])
    cells = evalkit.robustness_cells(spec, seeds=len(seeds))
    payloads = [(cell, resolved) for cell in cells]
    if resolved["jobs"] > 1:
        with multiprocessing.Pool(resolved["jobs"]) as pool:
            results = pool.map(_robust_worker, payloads)
    else:
        results = [_robust_worker(p) for p in payloads]
    rows = [
        (r["env"], r["protocol"], r["variant"], r["sigma"], r["fraction"],
         r["seed"], r["success"], r["episode_len"])
        for r in results
    ]
    _write_csv(out_dir / "results.csv", RESULT_COLUMNS, rows)
    _write_grouped_summary(out_dir / "summary.csv", results)
    _emit_protocol_plots(out_dir, rows)
    print(f"robustness suite complete: {len(rows)} cells")
    return 0


def _write_grouped_summary(path: Path, results: list[dict]) -> None:
    groups: dict[tuple, list[float]] = {}
    for r in results:
        key = (r["env"], r["protocol"], r["variant"], r["sigma"], r["fraction"])
        groups.setdefault(key, []).append(r["success"])
    rows = []
    for key in sorted(groups):
        vals = groups[key]
        mean = sum(vals) / len(vals)
        std = (sum((v - mean) ** 2 for v in vals) / len(vals)) ** 0.5
        rows.append(key + (mean, std, len(vals)))
    _write_csv(
        path,
        ("env", "protocol", "variant", "sigma", "fraction",
         "mean_success", "std_success", "seeds"),
        rows,
    )


def _emit_protocol_plots(out_dir: Path, rows) -> None:
    by_protocol: dict[str, list] = {}
    for row in rows:
        by_protocol.setdefault(row[1], []).append(row)
    for protocol, kind in (("noise", "noise"), ("fraction", "fraction")):
        subset = by_protocol.get(protocol)
        if not subset:
            continue
        csv_path = out_dir / f"{protocol}_curve.csv"
        _write_csv(csv_path, RESULT_COLUMNS, subset)
        svgplot.emit_plot(csv_path, kind, out_dir / f"{protocol}_curve.svg")


def cmd_diag(resolved: dict) -> int:
    spec = gcenv.make_spec(resolved["env"])
    if resolved["steps"] is None:
        resolved["steps"] = _DEFAULT_STEPS[spec.env_id]
    ds = datagen.load(resolved["data"])
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpts = resolved["ckpts"]
    write_sidecars(out_dir, resolved, [resolved["data"], *ckpts])
    bundles = [load_checkpoint(c) for c in ckpts]
    cfg = train_config_from(resolved)
    primary = bundles[0]

    _, goal = gcenv.sample_eval_task(spec, resolved["task"])
    vmap = evalkit.value_error_map(
        primary.rp, primary.ap, spec, goal,
        grid_resolution=resolved["grid_resolution"], gamma=resolved["gamma"],
        mc_horizon=resolved["mc_horizon"],
    )
    map_csv = out_dir / "value_map.csv"
    _write_csv(
        map_csv,
        ("x", "y", "q", "mc", "error"),
        [
            (p[0], p[1], q, mc, err)
            for p, q, mc, err in zip(vmap.points, vmap.q, vmap.mc, vmap.error)
        ],
    )
    svgplot.emit_plot(map_csv, "map", out_dir / "value_map.svg")

    for task in range(5):
        trace = evalkit.episode_trace(primary.rp, primary.ap, spec, task)
        steps = len(trace.actions)
        rows = [
            (t, trace.q_values[t], trace.latent_dists[t]) for t in range(steps)
        ]
        trace_csv = out_dir / f"trace_task{task}.csv"
        _write_csv(trace_csv, ("t", "q", "zdist"), rows)
        if rows:
            svgplot.emit_plot(trace_csv, "trace", out_dir / f"trace_task{task}.svg")

    rng = np.random.default_rng(resolved["eval_seed"])
    states = evalkit.sample_dataset_states(ds, 512, rng)
    rank = evalkit.latent_effective_rank(primary.rp, spec, states)
    (out_dir / "rank.txt").write_text(f"effective_rank={rank:.6f}\n")

    if len(bundles) >= 2:
        entries = [
            (Path(c).stem, b.rp, b.tgt_rp, b.ap, ds)
            for c, b in zip(ckpts, bundles)
        ]
        scatter = evalkit.goal_dyn_error_vs_success(
            entries, spec, cfg, resolved["eval_episodes"], resolved["eval_seed"],
        )
        _write_csv(
            out_dir / "gdyn_vs_success.csv",
            ("label", "gdyn_error", "mean_success"),
            scatter,
        )
    print(f"diagnostics written to {out_dir}")
    return 0


def cmd_layout(resolved: dict) -> int:
    spec = gcenv.make_spec(resolved["env"])
    text = gcenv.layout_dump(spec)
    if resolved.get("out"):
        Path(resolved["out"]).write_text(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit(1) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mspr", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, keys, **extra_flags):
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        for key in keys:
            p.add_argument(f"--{key.replace('_', '-')}", dest=key)
        for flag, kwargs in extra_flags.items():
            p.add_argument(flag, **kwargs)
        return p

    add("gen-data", COMMAND_KEYS["gen-data"])
    add("train", COMMAND_KEYS["train"])
    p_eval = add("eval", COMMAND_KEYS["eval"])
    p_eval.add_argument("--ckpt", required=True)
    add("ablate", COMMAND_KEYS["ablate"])
    add("robust", COMMAND_KEYS["robust"])
    p_diag = add("diag", COMMAND_KEYS["diag"])
    p_diag.add_argument("--ckpt", action="append", required=True)
    add("layout", COMMAND_KEYS["layout"])
    return parser


_REQUIRED = {
    "gen-data": ("env", "out"),
    "train": ("env", "data", "out"),
    "eval": ("out",),
    "ablate": ("env", "data", "out"),
    "robust": ("env", "out"),
    "diag": ("env", "data", "out"),
    "layout": ("env",),
}

_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "robust": cmd_robust,
    "diag": cmd_diag,
    "layout": cmd_layout,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        resolved = resolve_config(args.command, args)
        for key in _REQUIRED[args.command]:
            if resolved.get(key) is None:
                print(f"error: --{key.replace('_', '-')} is required", file=sys.stderr)
                return 1
        if args.command == "eval":
            resolved["ckpt"] = args.ckpt
        if args.command == "diag":
            resolved["ckpts"] = args.ckpt
        return _HANDLERS[args.command](resolved)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 0
        return code
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MsprError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected runtime failures also map to 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
