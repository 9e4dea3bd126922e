"""``roimpc`` command line: train, eval, rollout, plot.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Relative output paths are placed under ``$ROIMPC_OUTPUT_ROOT`` when it is set.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agents import SCRIPTED_AGENTS, PolicyAgent, Scheme, run_episode, scripted_agent
from .config import OUTPUT_ROOT_ENV, ConfigError, ExperimentConfig, _build, world_from_dict, world_to_dict
from .controllers import MpcWeights
from .environment import EpisodeLog, SpawnFailure, layout, spawn
from .evaluation import evaluate, roi_generalization
from .kernels import BACKEND
from .observation import ObservationLayout
from .policy import CheckpointError, load_checkpoint
from .roi import RoiConfig
from .trainer import read_curve, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SCRIPTED_PREFIX = "scripted:"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _out_path(p: str | os.PathLike) -> Path:
    path = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def version_stamp() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    here = Path(__file__).resolve().parent
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                           capture_output=True, text=True, timeout=5)
        rev = r.stdout.strip() if r.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+g{rev}" if rev else __version__


def run_metadata(cfg: ExperimentConfig) -> dict:
    world = cfg.world
    return {
        "config": cfg.to_dict(),
        "layout": {"id": cfg.layout, "world": world_to_dict(world),
                   "observation": ObservationLayout.for_world(world).descriptor()},
        "version": version_stamp(),
        "kernel_backend": BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "rerun": "roimpc train config.yaml (single worker is bit-reproducible)",
    }


# ---------------------------------------------------------------------------
# Policy loading


def _load_policy(spec: str):
    """Checkpoint path or ``scripted:<name>``; returns (params | None, scripted name | None, meta)."""
    if spec.startswith(SCRIPTED_PREFIX):
        name = spec[len(SCRIPTED_PREFIX):]
        if name not in SCRIPTED_AGENTS:
            raise UsageError(f"unknown scripted policy {name!r}; choose from {', '.join(SCRIPTED_AGENTS)}")
        return None, name, {}
    params, meta = load_checkpoint(spec)
    return params, None, meta


def _world_for(meta: dict, layout_id: int | None):
    if layout_id is not None:
        return layout(layout_id)
    if "world" in meta:
        return world_from_dict(meta["world"])
    return layout(1)


def _agent_for(params, scripted, scheme, world, weights, roi, deterministic=True):
    if scripted is not None:
        return scripted_agent(scripted, world, weights, roi)
    return PolicyAgent(params, scheme, world, weights, roi, deterministic=deterministic)


def _settings(meta: dict, scheme_arg: str | None, params):
    if scheme_arg is not None:
        scheme = Scheme(scheme_arg)
    elif "scheme" in meta:
        scheme = Scheme(meta["scheme"])
    elif params is not None:
        scheme = Scheme.ROI_GUIDED if params.mode.value == "HybridRoi" else Scheme.END_TO_END
    else:
        scheme = Scheme.ROI_GUIDED
    weights = _build(MpcWeights, meta.get("mpc"), "mpc")
    roi = _build(RoiConfig, meta.get("roi"), "roi")
    return scheme, weights, roi


# ---------------------------------------------------------------------------
# Commands


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.output:
        cfg = cfg.with_output(args.output)
    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.dumps(), encoding="utf-8")
    (out / "run.json").write_text(json.dumps(run_metadata(cfg), indent=2, sort_keys=True), encoding="utf-8")
    meta = {"world": world_to_dict(cfg.world), "mpc": cfg.to_dict()["mpc"], "roi": cfg.to_dict()["roi"],
            "layout": cfg.layout}
    log = None if args.quiet else (lambda s: print(s, file=sys.stderr, flush=True))
    with open(out / "train.log", "w", encoding="utf-8") as fh:
        def both(s):
            fh.write(s + "\n")
            if log:
                log(s)

        run = train(cfg.scheme, cfg.world, cfg.train, out_dir=out, weights=cfg.mpc, roi=cfg.roi, meta=meta, log=both)
    (out / "metrics.json").write_text(json.dumps(run.metrics, indent=2, sort_keys=True), encoding="utf-8")
    print(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    params, scripted, meta = _load_policy(args.checkpoint)
    scheme, weights, roi = _settings(meta, args.scheme, params)
    world = _world_for(meta, args.layout)
    agent = _agent_for(params, scripted, scheme, world, weights, roi)
    lay = args.layout if args.layout is not None else meta.get("layout", "checkpoint")
    if args.roi_random is not None:
        lo, hi = args.roi_random
        rep = roi_generalization(agent, world, lo, hi, args.episodes, args.seed, layout=lay)
    else:
        rep = evaluate(agent, scheme, world, args.episodes, args.seed, layout=lay)
    out = _out_path(args.output or f"eval/{Path(args.checkpoint.replace(':', '_')).stem}-L{lay}-s{args.seed}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rep.to_csv(), encoding="utf-8")
    out.with_suffix(".json").write_text(rep.to_json(), encoding="utf-8")
    print(rep.to_json())
    return EXIT_OK


def cmd_rollout(args) -> int:
    params, scripted, meta = _load_policy(args.checkpoint)
    scheme, weights, roi = _settings(meta, args.scheme, params)
    world = _world_for(meta, args.layout)
    agent = _agent_for(params, scripted, scheme, world, weights, roi, deterministic=not args.stochastic)
    ss = np.random.SeedSequence(args.seed)
    s_spawn, s_act = ss.spawn(2)
    spawn_seed = int(s_spawn.generate_state(1)[0])
    obstacles = spawn(world, spawn_seed).obstacles.tolist()
    res = run_episode(world, agent, spawn_seed, np.random.default_rng(s_act), record=True, meta={
        "policy": args.checkpoint, "scheme": scheme.value, "seed": args.seed, "r_world": world.r_world,
        "r_obs": world.r_obs, "capture_radius": world.capture_radius, "obstacles": obstacles,
    })
    out = _out_path(args.output or f"rollouts/{Path(args.checkpoint.replace(':', '_')).stem}-s{args.seed}.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    res.log.write(out)
    print(json.dumps({"output": str(out), "reward": res.reward, "steps": res.steps, "cause": res.cause.value,
                      "captured": res.n_captured}))
    return EXIT_OK


def _curve_label(path: Path) -> str:
    meta = path.parent / "run.json"
    if meta.exists():
        try:
            return json.loads(meta.read_text())["config"]["scheme"]
        except (ValueError, KeyError):
            pass
    return path.parent.name if path.name == "curve.csv" else path.stem


def cmd_plot(args) -> int:
    from .plotting import plot_curves, plot_trajectory  # matplotlib is only needed here

    curves, logs = {}, []
    for p in map(Path, args.inputs):
        if not p.exists():
            raise UsageError(f"no such input: {p}")
        if p.suffix == ".csv":
            label = _curve_label(p)
            while label in curves:
                label += "'"
            curves[label] = read_curve(p)
        elif p.suffix in (".jsonl", ".json"):
            logs.append(p)
        else:
            raise UsageError(f"cannot plot {p}: expected a curve .csv or a rollout .jsonl")
    out = _out_path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if curves:
        if not any(curves.values()):
            raise UsageError("curve files contain no evaluation rows")
        f = out / "reward_curves.svg"
        plot_curves(curves, f, normalized=not args.raw)
        written.append(f)
    for p in logs:
        f = out / f"{p.stem}.svg"
        plot_trajectory(EpisodeLog.read(p), f)
        written.append(f)
    for f in written:
        print(f)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="roimpc", description="ROI-guided RL over MPC: predator-prey training and evaluation.")
    ap.add_argument("--version", action="version", version=f"roimpc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a policy from a YAML config")
    t.add_argument("config")
    t.add_argument("--output", help="run directory (overrides output_dir in the config)")
    t.add_argument("--quiet", action="store_true", help="no per-update progress on stderr")
    t.set_defaults(func=cmd_train)

    def policy_args(p):
        p.add_argument("checkpoint", help=f"checkpoint .npz or {SCRIPTED_PREFIX}<{'|'.join(SCRIPTED_AGENTS)}>")
        p.add_argument("--layout", type=int, choices=(1, 2, 3),
                       help="standard layout (default: the checkpoint's training world)")
        p.add_argument("--scheme", choices=[s.value for s in Scheme], help="execution scheme override")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--output")

    e = sub.add_parser("eval", help="evaluate a frozen policy")
    policy_args(e)
    e.add_argument("--episodes", type=int, default=1000)
    e.add_argument("--roi-random", nargs=2, type=float, metavar=("MIN", "MAX"),
                   help="draw r_roi uniformly per episode")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="dump one episode as JSON lines")
    policy_args(r)
    r.add_argument("--stochastic", action="store_true", help="sample actions instead of the distribution mode")
    r.set_defaults(func=cmd_rollout)

    p = sub.add_parser("plot", help="SVG reward curves and trajectory traces")
    p.add_argument("inputs", nargs="*", help="curve .csv files and/or rollout .jsonl files")
    p.add_argument("--output", default="plots", help="output directory")
    p.add_argument("--raw", action="store_true", help="plot raw instead of normalised reward")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command == "eval" and args.episodes < 1:
        print("roimpc: error: --episodes must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "plot" and not args.inputs:
        print("roimpc: error: plot needs at least one input file", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"roimpc: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, SpawnFailure, OSError, ValueError) as e:
        print(f"roimpc: runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
