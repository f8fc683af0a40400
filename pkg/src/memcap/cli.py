"""Command-line front end: dataset generation, constructions, verification,
capacity certificates, budgets, gradient checks and SGD probes.

Every randomized command takes --seed (falling back to the MEMCAP_SEED
environment variable) and re-running with the same configuration produces
byte-identical JSON reports except for the elapsed_seconds field.  Exit codes:
0 all checks passed, 1 a verification failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .activations import RELU_LIKE, Activation
from .construct_fnn import MU_CLIP, construct_3layer, construct_4layer_classifier
from .data import CLASSIFICATION, Dataset, gen_dataset, load_csv, rng_for, save_csv
from .deep import BlockLayout, construct_deep
from .errors import ConstructionError
from .genpos import construct_2layer_classifier, construct_resnet_classifier, \
    is_general_position, node_budget
from .networks import (
    FnnParams,
    fnn_forward_batch,
    fnn_gradient,
    flatten_params,
    hidden_breakpoint_margin,
    load_network,
    resnet_forward_batch,
    save_network,
    unflatten_params,
    write_json_atomic,
)
from .pwl import hard_dataset, piece_bound, refute_fit, restrict_to_line
from .sgdlab import SQUARED, decay_experiment_setup, probe_contraction_law

DATASET_KINDS = ("regression_uniform", "classification_gaussian", "general_position", "hard_line")


def _activation_from_args(args) -> Activation:
    if args.act in ("relu", "relu_like"):
        return Activation(RELU_LIKE, args.s_plus, args.s_minus)
    return Activation(args.act)


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("MEMCAP_SEED")
    if env is not None:
        return int(env)
    raise SystemExit2("a seed is required: pass --seed or set MEMCAP_SEED")


class SystemExit2(Exception):
    """Usage error surfaced with exit code 2."""


def _config_dict(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",) and not k.startswith("_")}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}


def _emit(report: dict, path: str | None, started: float) -> None:
    report["elapsed_seconds"] = time.time() - started
    if path:
        write_json_atomic(report, path)
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _load_or_gen_dataset(args, seed) -> tuple:
    """Dataset from --data, or a generated one (written next to the outputs)."""
    if args.data:
        return load_csv(args.data), args.data
    if args.n is None:
        raise SystemExit2("need --data FILE or --n (with --dx/--dy) to generate one")
    ds = gen_dataset(args.kind, args.n, args.dx, args.dy, seed)
    path = os.path.join(args.out_dir, "data.csv")
    save_csv(ds, path)
    return ds, path


def _forward_any(net, X):
    if isinstance(net, FnnParams):
        return fnn_forward_batch(net, X)
    return resnet_forward_batch(net, X)


def _verify_against(net, dataset: Dataset, tol: float) -> dict:
    out = _forward_any(net, dataset.X)
    target = dataset.one_hot()
    max_err = float(np.abs(out - target).max()) if dataset.n else 0.0
    result = {"max_error": max_err, "tol": tol, "n_points": dataset.n, "pass": max_err <= tol}
    if dataset.task == CLASSIFICATION and dataset.n:
        result["accuracy"] = float((out.argmax(axis=1) == dataset.y).mean())
    return result


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    ds = gen_dataset(args.kind, args.n, args.dx, args.dy, seed)
    save_csv(ds, args.out)
    _emit({"command": "gen", "config": _config_dict(args), "seed": seed,
           "n": ds.n, "d_x": ds.d_x, "d_y": ds.d_y, "task": ds.task,
           "out": args.out}, args.report, started)
    return 0


def cmd_construct(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.kind is None:
        args.kind = {"3layer": "regression_uniform", "deep": "regression_uniform",
                     "4layer": "classification_gaussian", "resnet": "general_position",
                     "fnn2": "general_position"}[args.arch]
    dataset, data_path = _load_or_gen_dataset(args, seed)
    act = _activation_from_args(args)
    if args.arch == "3layer":
        net, report = construct_3layer(dataset, args.d1, args.d2, act, seed,
                                       mu_clip=args.tol_clip)
    elif args.arch == "4layer":
        net, report = construct_4layer_classifier(dataset, args.d1, args.d2, args.d3,
                                                  act, seed, mu_clip=args.tol_clip)
    elif args.arch == "deep":
        if not args.widths or not args.blocks:
            raise SystemExit2("construct deep needs --widths and --blocks")
        layout = BlockLayout(args.widths, args.blocks, dataset.d_y,
                             args.subset_sizes or None)
        net, report = construct_deep(dataset, layout, act, seed, mu_clip=args.tol_clip)
    elif args.arch == "resnet":
        net, report = construct_resnet_classifier(dataset, act, seed,
                                                  block_width=args.block_width,
                                                  mu_clip=args.tol_clip, det_tol=args.tol_det)
    elif args.arch == "fnn2":
        net, report = construct_2layer_classifier(dataset, act, seed,
                                                  mu_clip=args.tol_clip, det_tol=args.tol_det)
    else:  # pragma: no cover - argparse restricts choices
        raise SystemExit2(f"unknown architecture {args.arch}")
    net_path = os.path.join(args.out_dir, "net.json")
    save_network(net, net_path)
    verdict = _verify_against(net, dataset, args.tol)
    _emit({"command": f"construct {args.arch}", "config": _config_dict(args), "seed": seed,
           "data": data_path, "net": net_path, "construction": report,
           "verification": verdict},
          os.path.join(args.out_dir, "report.json"), started)
    return 0 if verdict["pass"] else 1


def cmd_verify(args) -> int:
    started = time.time()
    net = load_network(args.net)
    dataset = load_csv(args.data)
    verdict = _verify_against(net, dataset, args.tol)
    _emit({"command": "verify", "config": _config_dict(args), "verification": verdict},
          args.report, started)
    return 0 if verdict["pass"] else 1


def cmd_capacity(args) -> int:
    started = time.time()
    net = load_network(args.net)
    if not isinstance(net, FnnParams) or net.dims[-1] != 1:
        raise SystemExit2("capacity analysis needs a scalar-output fully-connected net")
    if args.u:
        u = np.array([float(v) for v in args.u.split(",")])
    elif args.hard_n:
        u = rng_for(_resolve_seed(args), "capacity-direction").standard_normal(net.dims[0])
    else:
        raise SystemExit2("pass --u or --hard-n (with --seed)")
    restriction = restrict_to_line(net, u)
    depth = net.n_layers
    bound = None
    if depth in (2, 3):
        bound = piece_bound(depth, net.activation.n_pieces, *net.dims[1:-1])
    report = {
        "command": "capacity", "config": _config_dict(args), "theorem": "thm3",
        "piece_count": restriction.n_pieces, "bound": bound,
    }
    if args.hard_n:
        hard = hard_dataset(args.hard_n, u)
        report["refutation"] = refute_fit(net, hard)
        report["verdict"] = report["refutation"]["verdict"]
    if args.plot_csv:
        bps = restriction.breakpoints
        if len(bps):
            ts = np.concatenate([[bps[0] - 1.0], bps, [bps[-1] + 1.0]])
        else:
            ts = np.array([-1.0, 1.0])
        with open(args.plot_csv, "w") as fh:
            fh.write("t,f\n")
            for t in ts:
                fh.write(f"{t!r},{restriction(float(t))!r}\n")
    _emit(report, args.report, started)
    return 0


def cmd_genpos_check(args) -> int:
    started = time.time()
    dataset = load_csv(args.data)
    rep = is_general_position(dataset.X, args.tol_det, seed=_resolve_seed(args))
    _emit({"command": "genpos-check", "config": _config_dict(args),
           "ok": rep.ok, "mode": rep.mode, "n_checked": rep.n_checked,
           "worst_margin": rep.worst_margin,
           "violation": list(rep.violation) if rep.violation else None},
          args.report, started)
    return 0 if rep.ok else 1


def cmd_budget(args) -> int:
    started = time.time()
    try:
        n, d_x = (int(v) for v in args.dataset_shape.lower().split("x"))
    except ValueError:
        raise SystemExit2(f"--dataset-shape wants NxD, got {args.dataset_shape!r}") from None
    act = _activation_from_args(args)
    nodes = node_budget(n, d_x, args.classes, args.arch, act)
    print(nodes)
    if args.report:
        theorem = "thm4" if args.arch == "resnet" else "cor5"
        _emit({"command": "budget", "config": _config_dict(args), "theorem": theorem,
               "hidden_nodes": nodes}, args.report, started)
    return 0


def cmd_sgd_probe(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    if args.data:
        dataset = load_csv(args.data)
        if args.net:
            theta_star = load_network(args.net)
        else:
            act = _activation_from_args(args)
            theta_star, _ = construct_3layer(dataset, args.d1, args.d2, act, seed,
                                             mu_clip=args.tol_clip)
    else:
        theta_star, dataset = decay_experiment_setup(args.n, seed)
    epsilons = [float(v) for v in args.epsilons.split(",")]
    report = probe_contraction_law(theta_star, dataset, SQUARED, epsilons,
                                   eta=args.eta, batch_size=args.batch,
                                   max_epochs=args.max_epochs, tau_emp=args.tau,
                                   seed=seed, keep_traces=bool(args.trace_csv))
    traces = report.pop("_traces", None)
    if args.trace_csv and traces:
        with open(args.trace_csv, "w") as fh:
            fh.write("epsilon,t,xi_par,xi_perp,risk\n")
            for eps, trace in traces:
                for t in range(len(trace.risk)):
                    fh.write(f"{eps!r},{t},{trace.xi_par[t]!r},{trace.xi_perp[t]!r},"
                             f"{trace.risk[t]!r}\n")
    ok = all(not r["excluded"] and r.get("t_star") is not None for r in report["runs"])
    _emit({"command": "sgd-probe", "config": _config_dict(args), **report},
          args.report, started)
    return 0 if ok else 1


def cmd_gradcheck(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    if args.net:
        net = load_network(args.net)
        if not isinstance(net, FnnParams) or net.dims[-1] != 1:
            raise SystemExit2("gradcheck needs a scalar-output fully-connected net")
    else:
        rng = rng_for(seed, "gradcheck-net")
        dims = [int(v) for v in args.dims.split(",")]
        weights = tuple(rng.standard_normal((dims[i + 1], dims[i])) for i in range(len(dims) - 1))
        biases = tuple(rng.standard_normal(dims[i + 1]) for i in range(len(dims) - 1))
        net = FnnParams(weights, biases, _activation_from_args(args))
    rng = rng_for(seed, "gradcheck-points")
    theta = flatten_params(net)
    worst = 0.0
    checked = 0
    while checked < args.points:
        x = rng.standard_normal(net.dims[0])
        if hidden_breakpoint_margin(net, x[None, :]) < 100 * args.h:
            continue  # too close to a kink for central differences
        g = fnn_gradient(net, x)
        fd = np.zeros_like(theta)
        for i in range(len(theta)):
            tp = theta.copy()
            tp[i] += args.h
            tm = theta.copy()
            tm[i] -= args.h
            fd[i] = (
                fnn_forward_batch(unflatten_params(tp, net), x[None, :])[0, 0]
                - fnn_forward_batch(unflatten_params(tm, net), x[None, :])[0, 0]
            ) / (2 * args.h)
        rel = float(np.abs(g - fd).max() / max(1.0, float(np.abs(fd).max())))
        worst = max(worst, rel)
        checked += 1
    passed = worst <= args.tol
    _emit({"command": "gradcheck", "config": _config_dict(args), "seed": seed,
           "points": checked, "max_rel_error": worst, "tol": args.tol, "pass": passed},
          args.report, started)
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# argument plumbing


def _add_seed(p):
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (falls back to MEMCAP_SEED)")


def _add_tols(p):
    p.add_argument("--tol-clip", type=float, default=MU_CLIP,
                   help="clipping margin used by constructions")
    p.add_argument("--tol-det", type=float, default=1e-8,
                   help="general-position margin threshold")


def _add_act(p):
    p.add_argument("--act", default="hard_tanh",
                   choices=["hard_tanh", "relu", "relu_like", "gate"])
    p.add_argument("--s-plus", type=float, default=1.0)
    p.add_argument("--s-minus", type=float, default=0.0)


def _csv_ints(text):
    return tuple(int(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memcap",
                                     description="constructive memorization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset CSV")
    p.add_argument("--kind", default="regression_uniform", choices=DATASET_KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dx", type=int, default=2)
    p.add_argument("--dy", type=int, default=1)
    p.add_argument("--out", default="data.csv")
    p.add_argument("--report", default=None)
    _add_seed(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("construct", help="synthesize exact memorizing weights")
    p.add_argument("arch", choices=["3layer", "4layer", "deep", "resnet", "fnn2"])
    p.add_argument("--data", default=None, help="dataset CSV (else generate with --n)")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--dx", type=int, default=2)
    p.add_argument("--dy", type=int, default=1)
    p.add_argument("--kind", default=None, choices=DATASET_KINDS,
                   help="kind for generated data (defaults per architecture)")
    p.add_argument("--d1", type=int, default=None)
    p.add_argument("--d2", type=int, default=None)
    p.add_argument("--d3", type=int, default=None)
    p.add_argument("--widths", type=_csv_ints, default=None)
    p.add_argument("--blocks", type=_csv_ints, default=None)
    p.add_argument("--subset-sizes", type=_csv_ints, default=None)
    p.add_argument("--block-width", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-6, help="verification tolerance")
    p.add_argument("--out-dir", default=".")
    _add_act(p)
    _add_seed(p)
    _add_tols(p)
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("verify", help="check a network against a dataset")
    p.add_argument("--net", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("capacity", help="exact piece count of a 1-D restriction")
    p.add_argument("--net", required=True)
    p.add_argument("--hard-n", type=int, default=None,
                   help="also refute fitting the alternating hard dataset of this size")
    p.add_argument("--u", default=None, help="comma-separated direction")
    p.add_argument("--plot-csv", default=None)
    p.add_argument("--report", default=None)
    _add_seed(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("genpos-check", help="certify the general-position assumption")
    p.add_argument("--data", required=True)
    p.add_argument("--report", default=None)
    _add_seed(p)
    p.add_argument("--tol-det", type=float, default=1e-8)
    p.set_defaults(func=cmd_genpos_check)

    p = sub.add_parser("budget", help="minimal hidden-node count for a dataset shape")
    p.add_argument("--dataset-shape", required=True, help="NxD, e.g. 50000x3072")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--arch", required=True, choices=["resnet", "fnn2"])
    p.add_argument("--report", default=None)
    _add_act(p)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("sgd-probe", help="decay/quartic-risk scaling around a minimum")
    p.add_argument("--data", default=None, help="scalar regression CSV")
    p.add_argument("--net", default=None, help="memorizing minimum (else constructed)")
    p.add_argument("--n", type=int, default=64, help="size of the built-in experiment set")
    p.add_argument("--d1", type=int, default=16)
    p.add_argument("--d2", type=int, default=4)
    p.add_argument("--epsilons", default="1e-2,5e-3,2.5e-3")
    p.add_argument("--eta", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--max-epochs", type=int, default=3000)
    p.add_argument("--tau", type=float, default=1e3)
    p.add_argument("--trace-csv", default=None)
    p.add_argument("--report", default=None)
    _add_act(p)
    _add_seed(p)
    _add_tols(p)
    p.set_defaults(func=cmd_sgd_probe)

    p = sub.add_parser("gradcheck", help="analytic gradient vs central differences")
    p.add_argument("--net", default=None)
    p.add_argument("--dims", default="4,5,4,1", help="dims of a random test net")
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--report", default=None)
    _add_act(p)
    _add_seed(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def run_command(argv) -> int:
    """Parse and execute; returns the exit code (0 ok, 1 failed check, 2 usage)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConstructionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
