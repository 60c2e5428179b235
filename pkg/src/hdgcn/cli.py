"""Single entry point for every workflow.

Subcommands: graph, data, train, eval, ensemble, gradcheck, flops.
Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical
failure. JSON config files can seed any subcommand's options, with
explicit flags taking precedence over file values over defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .data import (DatasetManifest, generate_synthetic, load_arrays, read_sequence,
                   write_sequence, STREAMS)
from .ensemble import EnsembleSpec, evaluate
from .errors import HDGCNError, NumericalError, TrainingError
from .gradsuite import GRAD_TOL, run_suite
from .hdgraph import build_conventional, build_hd, decompose, hd_edge_union, normalize, to_dot
from .checkpoint import write_tensors
from .network import HDGCN, ModelConfig, PRESETS, complexity
from .topology import builtin
from .training import TrainConfig, evaluate_model, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dtype(args) -> type:
    return np.float64 if args.precision == "f64" else np.float32


def _load_json_config(path, overrides: dict, defaults: dict) -> dict:
    """flags > file > defaults."""
    merged = dict(defaults)
    if path:
        merged.update(json.loads(Path(path).read_text()))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _print_config(args, resolved: dict) -> None:
    if getattr(args, "print_config", False):
        print(json.dumps(resolved, indent=1, default=str))


# -- subcommand handlers ------------------------------------------------------

def cmd_graph(args) -> int:
    if args.action != "build":
        raise HDGCNError(f"unknown graph action {args.action!r}")
    topo = builtin(args.topology)
    resolved = {"topology": args.topology, "com": args.com, "variant": args.variant,
                "normalize": args.normalize, "degree_scope": args.degree_scope,
                "flip_direction": args.flip_direction}
    _print_config(args, resolved)
    if args.variant == "conventional":
        adj = build_conventional(topo)
        decomp = None
    else:
        decomp = decompose(topo, args.com)
        adj = build_hd(decomp, args.variant, topology=topo,
                       flip_direction=args.flip_direction)
    if args.normalize:
        adj = normalize(adj, args.degree_scope)
    if args.export_dot:
        if decomp is not None:
            dot = to_dot(decomp, adj, topo.joint_names)
        else:
            lines = ["digraph skeleton {"]
            lines += [f"  n{a} -> n{b};" for a, b in topo.pc_edges]
            lines.append("}")
            dot = "\n".join(lines) + "\n"
        Path(args.export_dot).write_text(dot)
        _say(args, f"wrote {args.export_dot}")
    if args.export_json:
        payload = {"topology": topo.to_dict(), "variant": adj.variant,
                   "normalized": adj.normalized}
        if decomp is not None:
            payload["hierarchy"] = decomp.to_dict()
            payload["edge_union"] = sorted(hd_edge_union(adj))
        Path(args.export_json).write_text(json.dumps(payload, indent=1) + "\n")
        _say(args, f"wrote {args.export_json}")
    if args.export_hdt:
        write_tensors(Path(args.export_hdt),
                      {"adjacency": np.asarray(adj.tensor, dtype=np.float32)})
        _say(args, f"wrote {args.export_hdt}")
    if decomp is not None and not args.quiet:
        for k, members in enumerate(decomp.sets, start=1):
            print(f"H_{k}: {sorted(members)}")
    return EXIT_OK


def cmd_data(args) -> int:
    if args.action == "generate":
        resolved = {"out": args.out, "classes": args.classes,
                    "train_per_class": args.train_per_class,
                    "test_per_class": args.test_per_class,
                    "noise": args.noise, "seed": args.seed, "frames": args.frames}
        _print_config(args, resolved)
        train_m, test_m = generate_synthetic(
            args.out, num_classes=args.classes, train_per_class=args.train_per_class,
            test_per_class=args.test_per_class, noise=args.noise,
            seed=0 if args.seed is None else args.seed, frames=args.frames)
        _say(args, f"wrote {train_m}\nwrote {test_m}")
        return EXIT_OK
    if args.action == "convert":
        seq = read_sequence(args.input)
        write_sequence(args.output, seq)
        _say(args, f"wrote {args.output}")
        return EXIT_OK
    raise HDGCNError(f"unknown data action {args.action!r}")


def cmd_train(args) -> int:
    overrides = {"epochs": args.epochs, "batch_size": args.batch_size,
                 "seed": args.seed}
    tc = TrainConfig.from_dict(_load_json_config(args.config, overrides,
                                                 TrainConfig().to_dict()))
    model_overrides = {"seed": args.seed}
    mc_defaults = ModelConfig().to_dict()
    manifest = DatasetManifest.load(args.data)
    mc_defaults["num_classes"] = len(manifest.classes)
    mc = ModelConfig.from_dict(_load_json_config(args.model_config, model_overrides,
                                                 mc_defaults))
    _print_config(args, {"train": tc.to_dict(), "model": mc.to_dict(),
                         "stream": args.stream, "com": mc.com})
    dtype = _dtype(args)
    model = HDGCN(mc, dtype=dtype)
    x, y = load_arrays(manifest, stream=args.stream, com=mc.com, window=mc.window,
                       topology=model.topology)
    eval_xy = None
    if args.eval_data:
        em = DatasetManifest.load(args.eval_data)
        eval_xy = load_arrays(em, stream=args.stream, com=mc.com, window=mc.window,
                              topology=model.topology)
    state, history = train(model, (x.astype(dtype), y), tc, out_dir=args.out,
                           eval_xy=eval_xy, resume=args.resume, quiet=args.quiet)
    _say(args, f"best top-1 {state.best_metric:.4f} after {state.epoch} epochs")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = HDGCN.load(args.checkpoint)
    manifest = DatasetManifest.load(args.data)
    _print_config(args, {"checkpoint": args.checkpoint, "data": args.data,
                         "stream": args.stream, "com": args.com or model.config.com})
    com = args.com or model.config.com
    x, y = load_arrays(manifest, stream=args.stream, com=com,
                       window=model.config.window, topology=model.topology)
    top1, top5, logits = evaluate_model(model, x, y, args.batch_size)
    report = {"top1": top1, "top5": top5, "samples": int(len(y)),
              "stream": args.stream, "com": com}
    if args.dump_attention:
        model.predict_proba(x[:min(len(x), args.batch_size)])
        rows = []
        for b, att in enumerate(model.attention_maps()):
            if att is None:
                continue
            # channel- and sample-averaged score per hierarchy layer
            mean = att.mean(axis=(0, 1))
            for k, score in enumerate(mean):
                rows.append({"block": b, "layer": k, "score": float(score)})
        with open(args.dump_attention, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["block", "layer", "score"])
            w.writeheader()
            w.writerows(rows)
        _say(args, f"wrote {args.dump_attention}")
    out = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(out + "\n")
        _say(args, f"wrote {args.out}")
    elif not args.quiet:
        print(out)
    return EXIT_OK


def cmd_ensemble(args) -> int:
    spec = EnsembleSpec.load(args.spec)
    manifest = DatasetManifest.load(args.data)
    _print_config(args, {"spec": args.spec, "data": args.data})
    report = evaluate(spec, manifest, batch_size=args.batch_size)
    payload = json.dumps(report.to_dict(), indent=1)
    if args.out:
        Path(args.out).write_text(payload + "\n")
        _say(args, f"wrote {args.out}")
    elif not args.quiet:
        print(payload)
    if args.per_class_csv:
        with open(args.per_class_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "accuracy"])
            for name, acc in report.per_class.items():
                w.writerow([name, acc])
        _say(args, f"wrote {args.per_class_csv}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    _print_config(args, {"module": args.module, "tol": args.tol, "seed": args.seed or 0})
    results = run_suite(args.module, seed=args.seed or 0)
    worst_name, worst = max(results, key=lambda kv: kv[1])
    for name, err in results:
        status = "ok" if err <= args.tol else "FAIL"
        if not args.quiet:
            print(f"{status:4s} {name:40s} rel_err={err:.3e}")
    if worst > args.tol:
        raise NumericalError(
            f"gradient check failed: {worst_name} rel_err={worst:.3e} > tol={args.tol}")
    _say(args, f"all {len(results)} checks within tol={args.tol}")
    return EXIT_OK


def cmd_flops(args) -> int:
    if args.preset:
        if args.preset not in PRESETS:
            raise HDGCNError(f"unknown preset {args.preset!r} (have {sorted(PRESETS)})")
        cfg = PRESETS[args.preset]
    elif args.config:
        cfg = ModelConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        raise HDGCNError("flops needs --preset or --config")
    _print_config(args, cfg.to_dict())
    report = complexity(cfg, frames=args.frames)
    print(json.dumps(report.to_dict(), indent=1))
    return EXIT_OK


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdgcn", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="global RNG seed")
        p.add_argument("--precision", choices=("f32", "f64"), default="f32",
                       help="numeric precision for model math")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved configuration before running")

    g = sub.add_parser("graph", help="build and export skeleton graphs")
    g.add_argument("action", choices=("build",), help="graph operation")
    g.add_argument("--topology", default="ntu25", help="ntu25|kinetics18|kinetics20|custom:<json>")
    g.add_argument("--com", default="belly", help="CoM joint role or 1-based id")
    g.add_argument("--variant", choices=("fc", "pc", "conventional"), default="fc",
                   help="HD fully-connected, HD physical-only, or conventional graph")
    g.add_argument("--flip-direction", action="store_true",
                   help="swap centripetal/centrifugal orientation")
    g.add_argument("--normalize", action="store_true", help="apply degree normalization")
    g.add_argument("--degree-scope", choices=("subset", "pooled"), default="subset",
                   help="degree counting scope for normalization")
    g.add_argument("--export-dot", default=None, help="write Graphviz DOT file")
    g.add_argument("--export-json", default=None, help="write hierarchy/edge JSON")
    g.add_argument("--export-hdt", default=None, help="write adjacency stack as HDT1")
    common(g)
    g.set_defaults(func=cmd_graph)

    d = sub.add_parser("data", help="generate or convert skeleton datasets")
    d.add_argument("action", choices=("generate", "convert"), help="data operation")
    d.add_argument("--out", default="dataset", help="output directory (generate)")
    d.add_argument("--classes", type=int, default=8, help="number of motion classes")
    d.add_argument("--train-per-class", type=int, default=100, help="train samples per class")
    d.add_argument("--test-per-class", type=int, default=25, help="test samples per class")
    d.add_argument("--noise", type=float, default=0.02, help="additive coordinate noise sigma")
    d.add_argument("--frames", type=int, default=48, help="raw frames per generated sequence")
    d.add_argument("--input", default=None, help="input sequence file (convert)")
    d.add_argument("--output", default=None, help="output sequence file (convert)")
    common(d)
    d.set_defaults(func=cmd_data)

    t = sub.add_parser("train", help="train a model on a dataset manifest")
    t.add_argument("--config", default=None, help="TrainConfig JSON file")
    t.add_argument("--model-config", default=None, help="ModelConfig JSON file")
    t.add_argument("--data", required=True, help="training manifest JSON")
    t.add_argument("--eval-data", default=None, help="evaluation manifest JSON")
    t.add_argument("--out", required=True, help="output directory for checkpoints/metrics")
    t.add_argument("--stream", choices=STREAMS, default="joint", help="input stream")
    t.add_argument("--epochs", type=int, default=None, help="override epoch count")
    t.add_argument("--batch-size", type=int, default=None, help="override batch size")
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True, help="model checkpoint (.hdt)")
    e.add_argument("--data", required=True, help="manifest JSON")
    e.add_argument("--stream", choices=STREAMS, default="joint", help="input stream")
    e.add_argument("--com", default=None, help="CoM for stream derivation (default: model's)")
    e.add_argument("--batch-size", type=int, default=64, help="evaluation batch size")
    e.add_argument("--out", default=None, help="write report JSON here instead of stdout")
    e.add_argument("--dump-attention", default=None,
                   help="write per-block hierarchy attention scores CSV")
    common(e)
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("ensemble", help="fuse several checkpoints and report")
    n.add_argument("--spec", required=True, help="ensemble spec JSON")
    n.add_argument("--data", required=True, help="manifest JSON")
    n.add_argument("--batch-size", type=int, default=64, help="evaluation batch size")
    n.add_argument("--out", default=None, help="write report JSON here instead of stdout")
    n.add_argument("--per-class-csv", default=None, help="write per-class accuracy CSV")
    common(n)
    n.set_defaults(func=cmd_ensemble)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--module", choices=("ops", "layers", "model", "all"), default="all",
                   help="which check group to run")
    c.add_argument("--tol", type=float, default=GRAD_TOL, help="max relative error")
    common(c)
    c.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("flops", help="parameter and FLOP report")
    f.add_argument("--preset", default=None, help=f"one of {sorted(PRESETS)}")
    f.add_argument("--config", default=None, help="ModelConfig JSON file")
    f.add_argument("--frames", type=int, default=None, help="window length (default: config)")
    common(f)
    f.set_defaults(func=cmd_flops)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NumericalError, TrainingError) as exc:
        print(f"hdgcn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (HDGCNError, FileNotFoundError, json.JSONDecodeError, OSError) as exc:
        print(f"hdgcn: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
