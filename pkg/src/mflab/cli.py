"""Command-line driver: ``mflab <command> [flags]``.

Every command writes a ``*.manifest.json`` next to its outputs; ``mflab
replay MANIFEST`` re-runs the recorded command line and reproduces the CSV
outputs byte for byte. Exit codes: 0 success, 1 runtime failure, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .convergence import (
    ExperimentConfig,
    fmt_float,
    lemma_sweep,
    summary_json,
    thm1_experiment,
    thm2_experiment,
    thm3_experiment,
)
from .errors import MflabError
from .filters import FilterSpec
from .manifold import ManifoldSpec

EXPERIMENTS = {"thm1": thm1_experiment, "thm2": thm2_experiment, "thm3": thm3_experiment}
MANIFOLD_CHOICES = ("circle", "torus2")


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _filter_spec(text):
    try:
        return FilterSpec.from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise argparse.ArgumentTypeError(f"bad filter JSON: {exc}") from None


def _signal(text):
    try:
        return {int(k): float(v) for k, v in json.loads(text).items()}
    except (ValueError, AttributeError) as exc:
        raise argparse.ArgumentTypeError(f"bad signal JSON: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mflab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mflab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    for name in EXPERIMENTS:
        t = sub.add_parser(name, help=f"run the {name} convergence experiment")
        t.add_argument("--manifold", choices=MANIFOLD_CHOICES, default="circle")
        t.add_argument("--scale", type=float, default=1.0, help="circle radius or torus side")
        t.add_argument("--n", type=_int_list, default=[250, 500, 1000, 2000], help="e.g. 250,500,1000")
        t.add_argument("--trials", type=int, default=10)
        t.add_argument("--seed", type=int, default=0)
        t.add_argument("--K", type=int, default=5, help="spectral depth")
        t.add_argument("--filter", type=_filter_spec, default=FilterSpec.heat(1.0), help="FilterSpec JSON")
        t.add_argument("--signal", type=_signal, default={1: 1.0}, help='band-limited modes, e.g. {"1": 1.0}')
        t.add_argument("--epsilon", type=float, default=None, help="fixed bandwidth (default n^(-1/(d+4)))")
        t.add_argument("--eval-points", type=int, default=20)
        t.add_argument("--no-volume-scaling", action="store_true")
        t.add_argument("--fdt-alpha", type=float, default=0.5)
        t.add_argument("--fdt-gamma", type=float, default=0.1)
        t.add_argument("--quick", action="store_true", help="halve n values and trials")
        t.add_argument("--out", default=None, help="CSV path (default ./out/<cmd>_<seed>.csv)")

    nt = sub.add_parser("nav-train", help="train a navigation graph filter")
    src = nt.add_mutually_exclusive_group()
    src.add_argument("--map", default=None, help="map JSON path")
    src.add_argument("--default-map", action="store_true")
    nt.add_argument("--n", type=int, default=413)
    nt.add_argument("--layers", type=int, choices=(1, 2), default=2)
    nt.add_argument("--epochs", type=int, default=3000)
    nt.add_argument("--lr", type=float, default=2e-4)
    nt.add_argument("--seed", type=int, default=0)
    nt.add_argument("--epsilon", type=float, default=None)
    nt.add_argument("--trajectories", type=int, default=4)
    nt.add_argument("--hidden", type=int, default=32)
    nt.add_argument("--no-tanh", action="store_true", help="drop the hidden nonlinearity")
    nt.add_argument("--model", default=None, help="output model JSON path")

    ne = sub.add_parser("nav-eval", help="evaluate a trained navigation model")
    ne.add_argument("--model", default=None, help="model JSON written by nav-train")
    ne.add_argument("--map", default=None, help="override the map stored in the model")
    ne.add_argument("--tests", type=int, default=100)
    ne.add_argument("--seed", type=int, default=None, help="test-start seed (default: training seed)")
    ne.add_argument("--out", default=None, help="CSV of per-rollout results")

    lm = sub.add_parser("lemmas", help="sweep the eigenpair perturbation inequalities")
    lm.add_argument("--pairs", type=int, default=1000)
    lm.add_argument("--dim", type=int, default=4)
    lm.add_argument("--perturb", type=float, default=0.01)
    lm.add_argument("--seed", type=int, default=0)

    rp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    rp.add_argument("manifest")
    return p


def _write_manifest(path: Path, command: str, argv, config: dict, seed, outputs, started: float):
    body = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "master_seed": seed,
        "version": __version__,
        "outputs": [str(o) for o in outputs],
        "duration_s": round(time.time() - started, 3),
    }
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _stem(path: Path) -> Path:
    return path.with_suffix("")


def cmd_thm(args, argv) -> int:
    started = time.time()
    ns, trials = list(args.n), args.trials
    if args.quick:
        ns = sorted({max(2, n // 2) for n in ns})
        trials = max(1, trials // 2)
    cfg = ExperimentConfig(
        manifold=ManifoldSpec(args.manifold, args.scale),
        n_values=tuple(ns),
        trials=trials,
        master_seed=args.seed,
        epsilon_rule=args.epsilon if args.epsilon is not None else "default",
        K=args.K,
        filter=args.filter,
        signal=args.signal,
        eval_points=args.eval_points,
        volume_scaling=not args.no_volume_scaling,
        fdt_alpha=args.fdt_alpha,
        fdt_gamma=args.fdt_gamma,
    )
    out = Path(args.out or f"out/{args.command}_{args.seed}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    report = EXPERIMENTS[args.command](cfg)
    report.to_csv(out)
    summary = Path(f"{_stem(out)}.summary.json")
    summary.write_text(summary_json(report) + "\n")
    _write_manifest(Path(f"{_stem(out)}.manifest.json"), args.command, argv, cfg.to_dict(), args.seed,
                    [out, summary], started)
    print(f"wrote {out} ({len(report.rows)} rows)")
    print(f"fitted slope ({report.metric}): {fmt_float(report.fitted_slope)}")
    return 0


def cmd_nav_train(args, argv) -> int:
    from .navigation import NavMap, default_map, train_navigation

    started = time.time()
    nav_map = NavMap.load(args.map) if args.map else default_map()
    result = train_navigation(
        nav_map,
        n=args.n,
        layers=args.layers,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        epsilon=args.epsilon,
        n_trajectories=args.trajectories,
        hidden=args.hidden,
        nonlinearity="none" if args.no_tanh else "tanh",
    )
    model = Path(args.model or f"out/nav_model_L{args.layers}_n{args.n}_s{args.seed}.json")
    model.parent.mkdir(parents=True, exist_ok=True)
    model.write_text(json.dumps(result.to_dict(), indent=1, sort_keys=True) + "\n")
    loss = Path(f"{_stem(model)}.loss.csv")
    loss.write_text("epoch,loss\n" + "".join(f"{i},{fmt_float(v)}\n" for i, v in enumerate(result.history)))
    data = Path(f"{_stem(model)}.dataset.csv")
    data.write_text(result.dataset.to_csv())
    _write_manifest(Path(f"{_stem(model)}.manifest.json"), "nav-train", argv, result.meta, args.seed,
                    [model, loss, data], started)
    final = result.history[-1] if result.history else float("nan")
    print(f"wrote {model}; labelled nodes {len(result.dataset.labeled_indices)}; final loss {fmt_float(final)}")
    return 0


def cmd_nav_eval(args, argv, parser) -> int:
    from .navigation import NavMap, load_trained, rollout_table

    if not args.model:
        parser.error("nav-eval requires --model")
    if not os.path.exists(args.model):
        parser.error(f"model file {args.model} does not exist")
    started = time.time()
    trained = load_trained(args.model)
    nav_map = NavMap.load(args.map) if args.map else trained.nav_map
    seed = trained.meta["seed"] if args.seed is None else args.seed
    rows = rollout_table(trained, nav_map, args.tests, seed)
    successes = sum(r[-1] for r in rows)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("test,start_x,start_y,steps,reason,success\n"
                       + "".join(f"{i},{fmt_float(x)},{fmt_float(y)},{s},{r},{int(ok)}\n"
                                 for i, (x, y, s, r, ok) in enumerate(rows)))
        _write_manifest(Path(f"{_stem(out)}.manifest.json"), "nav-eval", argv,
                        {"model": args.model, "tests": args.tests, "seed": seed}, seed, [out], started)
    layers, n = trained.meta["layers"], trained.meta["n"]
    print("model | n | successful trajectories")
    print(f"{layers}-layer graph filter | {n} | {successes}/{args.tests}")
    print(successes)
    return 0


def cmd_lemmas(args) -> int:
    sweep = lemma_sweep(args.pairs, args.dim, args.perturb, args.seed)

    def show(rate):
        return "N/A" if rate is None else f"{100 * rate:.1f}%"

    print(f"pairs: {sweep.pairs}, non-degenerate: {sweep.non_degenerate}")
    print(f"eigenfunction bound holds: {show(sweep.rate('eigfun'))}")
    print(f"eigenvalue bound holds: {show(sweep.rate('eigval'))}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in EXPERIMENTS:
            return cmd_thm(args, argv)
        if args.command == "nav-train":
            return cmd_nav_train(args, argv)
        if args.command == "nav-eval":
            return cmd_nav_eval(args, argv, parser)
        if args.command == "lemmas":
            return cmd_lemmas(args)
        if args.command == "replay":
            manifest = json.loads(Path(args.manifest).read_text())
            return main(manifest["argv"])
    except MflabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
