"""Command-line driver: gen, train, synth, eval, render (and run = all of them).

Exit codes: 0 success, 1 ordering/assertion failure, 2 usage or input error.
"""

import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse  # noqa: E402
import csv  # noqa: E402
import io  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import evaluation as ev  # noqa: E402
from . import jsonio  # noqa: E402
from . import models as m  # noqa: E402
from . import simcourt as sc  # noqa: E402
from .config import ROLES, load_config  # noqa: E402
from .errors import DivergenceError, ParseError, ValidationError  # noqa: E402
from .render import render_svg  # noqa: E402
from .synthesis import SynthesisOptions, synthesize  # noqa: E402

log = logging.getLogger("egosynth")

EXIT_OK, EXIT_ASSERT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- layout --------------------------------------------------------------------


def data_dir(out):
    return Path(out) / "data"


def model_path(out, replicate, role):
    return Path(out) / "models" / f"rep{replicate}" / f"{role}.json"


def generated_dir(out, replicate, method):
    return Path(out) / "generated" / f"rep{replicate}" / method


def trace_dir(out, replicate, method):
    return Path(out) / "traces" / f"rep{replicate}" / method


def report_dir(out):
    return Path(out) / "report"


# -- helpers -------------------------------------------------------------------


def _load_dataset(out):
    d = data_dir(out)
    if not (d / "manifest.json").exists():
        raise UsageError(f"no dataset at {d}; run `egosynth gen` first")
    return sc.load_sequences(d)


def _replicates(cfg, args):
    if getattr(args, "replicate", None) is not None:
        if not 0 <= args.replicate < cfg.replicates:
            raise UsageError(f"replicate must be in 0..{cfg.replicates - 1}")
        return [args.replicate]
    return list(range(cfg.replicates))


def _load_pipeline(cfg, dataset, replicate):
    loaded = {}
    expected = m.normalizer_id(dataset.normalizer)
    for role in ROLES:
        path = model_path(cfg.out, replicate, role)
        if not path.exists():
            raise UsageError(f"missing model bundle {path}; run `egosynth train` first")
        model = m.load_model(path, expect_role=role)
        if m.normalizer_id(model.normalizer) != expected:
            raise UsageError(f"{path} was trained against a different dataset normalizer")
        loaded[role] = model
    return ev.Pipeline(loaded["ego"], loaded["future"], loaded["verifier"], loaded["recurrent"], replicate)


def _write_loss_log(path, history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "loss"])
    for i, loss in enumerate(history, start=1):
        w.writerow([i, format(loss, ".17g")])
    jsonio.atomic_write_text(path, buf.getvalue())


# -- commands ------------------------------------------------------------------


def cmd_gen(cfg, args):
    dataset = sc.generate_dataset(cfg.sim)
    sc.save_sequences(data_dir(cfg.out), dataset)
    all_seqs = dataset.train + dataset.test
    coverage = sc.start_coverage(all_seqs, cfg.sim)
    lengths = [len(s) for s in all_seqs]
    print(f"dataset: {len(all_seqs)} sequences ({len(dataset.train)} train / {len(dataset.test)} test)")
    print(f"frames per sequence: min {min(lengths)}, mean {np.mean(lengths):.2f}, max {max(lengths)}")
    print(f"start-cell coverage: {coverage:.1%} of 1 m cells")
    print("start histogram (rows: y from half-court line down to baseline, 1 m cells):")
    hist = sc.coverage_histogram(all_seqs, cfg.sim)
    for row in hist[::-1]:
        print("  " + "".join(" .:-=+*#%@"[min(c, 9)] for c in row))
    print(f"written to {data_dir(cfg.out)}")
    return EXIT_OK


def train_role(dataset, cfg, role, replicate):
    tc = cfg.train_config(role, replicate)
    if role == "ego":
        return m.train_ego_encoder(dataset, tc, cfg.hidden)
    if role == "future":
        return m.train_future(dataset, cfg.branches, tc, cfg.hidden)
    if role == "verifier":
        return m.train_goal_verifier(dataset, tc)
    return ev.train_recurrent_baseline(dataset, tc, cfg.hidden, cfg.recurrent_epsilon)


def cmd_train(cfg, args):
    dataset = _load_dataset(cfg.out)
    roles = ROLES if args.which == "all" else (args.which,)
    for rep in _replicates(cfg, args):
        for role in roles:
            model = train_role(dataset, cfg, role, rep)
            path = model_path(cfg.out, rep, role)
            m.save_model(path, model)
            _write_loss_log(path.with_name(f"{role}_loss.csv"), model.history)
            first = np.mean(model.history[:100])
            last = np.mean(model.history[-100:])
            print(f"rep{rep} {role:<9} loss {first:.4f} -> {last:.4f}  ({path})")
    return EXIT_OK


def cmd_synth(cfg, args):
    dataset = _load_dataset(cfg.out)
    by_id = {s.id: s for s in dataset.test}
    if args.id:
        missing = [i for i in args.id if i not in by_id]
        if missing:
            raise UsageError(f"unknown test sequence id(s): {', '.join(missing)}")
        seqs = [by_id[i] for i in args.id]
    else:
        seqs = dataset.test
    use_verifier = not args.no_verifier
    method = "full" if use_verifier else "noverifier"
    opts = cfg.synthesis
    for rep in _replicates(cfg, args):
        pipe = _load_pipeline(cfg, dataset, rep)
        try:
            generated, _ = ev.generate(pipe, seqs, dataset.normalizer, use_verifier, opts)
        except DivergenceError as exc:
            # find the offending sequence by rerunning one at a time
            for s in seqs:
                try:
                    ev.generate(pipe, [s], dataset.normalizer, use_verifier, opts)
                except DivergenceError:
                    print(f"error: synthesis diverged for {s.id} (replicate {rep}): {exc}", file=sys.stderr)
                    return EXIT_ASSERT
            raise
        outdir = generated_dir(cfg.out, rep, method)
        for g in generated:
            sc.write_sequences(outdir / f"{g.id}.jsonl", [g])
        if args.trace:
            _dump_traces(cfg, pipe, seqs, use_verifier, rep, method)
        print(f"rep{rep} {method}: {len(generated)} sequences -> {outdir}")
    return EXIT_OK


def _dump_traces(cfg, pipe, seqs, use_verifier, rep, method):
    opts = SynthesisOptions(cfg.synthesis.iterations, cfg.synthesis.step, cfg.synthesis.m_out, use_verifier)
    starts, phis = ev.first_frame_inputs(pipe, seqs)
    outdir = trace_dir(cfg.out, rep, method)
    for i, s in enumerate(seqs):
        trace = synthesize(starts[i], phis[i], pipe.verifier, opts)
        lines = [jsonio.dumps({"format": "egosynth-trace", "version": 1, "id": s.id, "phase_starts": trace.phase_starts})]
        for c, (h, obj, data) in enumerate(zip(trace.iterates, trace.objectives, trace.data_terms)):
            lines.append(jsonio.dumps({"c": c, "h": h, "objective": obj, "data": data}))
        jsonio.atomic_write_text(outdir / f"{s.id}.jsonl", "\n".join(lines) + "\n")


def _read_generated(cfg, dataset, rep, method):
    outdir = generated_dir(cfg.out, rep, method)
    out = {}
    for s in dataset.test:
        path = outdir / f"{s.id}.jsonl"
        if not path.exists():
            raise UsageError(f"missing generated sequence {path}; run `egosynth synth{' --no-verifier' if method == 'noverifier' else ''}`")
        (g,) = sc.read_sequences(path)
        out[s.id] = g
    return out


def cmd_eval(cfg, args):
    dataset = _load_dataset(cfg.out)
    reps = _replicates(cfg, args)
    per_seed, rows = {}, []
    for rep in reps:
        pipe = _load_pipeline(cfg, dataset, rep)
        generated = {
            method: _read_generated(cfg, dataset, rep, method)
            for method in ("noverifier", "full")
            if method in cfg.methods
        }
        per_seed[rep], seed_rows = ev.evaluate_seed(dataset, pipe, generated, rep)
        per_seed[rep] = {k: v for k, v in per_seed[rep].items() if k in cfg.methods}
        rows += [r for r in seed_rows if r["method"] in cfg.methods]
    report = ev.aggregate(per_seed, rows, reps, ev.dataset_id(dataset), cfg.recurrent_epsilon)
    rdir = report_dir(cfg.out)
    table = ev.format_table(report)
    jsonio.atomic_write_text(rdir / "table.txt", table)
    jsonio.atomic_write_text(rdir / "details.jsonl", ev.format_details(report))
    jsonio.atomic_write_text(rdir / "summary.json", jsonio.dumps(report.to_dict()) + "\n")
    print(table, end="")
    status = EXIT_OK
    if report.incomplete:
        print(f"report incomplete: {', '.join(report.incomplete)}", file=sys.stderr)
    if args.assert_orderings:
        for name, ok, detail in ev.check_orderings(report):
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
            if not ok:
                status = EXIT_ASSERT
    return status


def cmd_render(cfg, args):
    seqs = []
    for path in args.files:
        try:
            if os.path.isdir(path):
                if os.path.exists(os.path.join(path, "manifest.json")):
                    ds = sc.load_sequences(path)
                    seqs += ds.train + ds.test
                else:
                    for name in sorted(os.listdir(path)):
                        if name.endswith(".jsonl"):
                            seqs += sc.read_sequences(os.path.join(path, name))
            else:
                seqs += sc.read_sequences(path)
        except (OSError, ParseError, ValidationError) as exc:
            raise UsageError(f"cannot read {path}: {exc}") from exc
    if not seqs:
        raise UsageError("no sequences to render")
    svg = render_svg(seqs, cfg.sim, scatter=args.scatter)
    target = Path(args.output) if args.output else Path(cfg.out) / "render.svg"
    jsonio.atomic_write_text(target, svg)
    print(f"rendered {len(seqs)} sequences -> {target}")
    return EXIT_OK


def cmd_run(cfg, args):
    """gen -> train all -> synth (both variants) -> eval."""
    for step in (
        lambda: cmd_gen(cfg, args),
        lambda: cmd_train(cfg, argparse.Namespace(which="all", replicate=None)),
        lambda: cmd_synth(cfg, argparse.Namespace(id=None, no_verifier=False, trace=False, replicate=None)),
        lambda: cmd_synth(cfg, argparse.Namespace(id=None, no_verifier=True, trace=False, replicate=None)),
        lambda: cmd_eval(cfg, argparse.Namespace(assert_orderings=args.assert_orderings, replicate=None)),
    ):
        status = step()
        if status != EXIT_OK:
            return status
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (overrides config)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="egosynth", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", parents=[common], help="generate the synthetic dataset")

    p = sub.add_parser("train", parents=[common], help="train model bundles")
    p.add_argument("which", nargs="?", default="all", choices=ROLES + ("all",))
    p.add_argument("--replicate", type=int, default=None)

    p = sub.add_parser("synth", parents=[common], help="inverse synthesis from test first frames")
    p.add_argument("--id", action="append", help="test sequence id (repeatable); default: all test sequences")
    p.add_argument("--no-verifier", action="store_true", help="drop the goal-verifier term (ablation)")
    p.add_argument("--trace", action="store_true", help="also dump full optimization traces")
    p.add_argument("--replicate", type=int, default=None)

    p = sub.add_parser("eval", parents=[common], help="score all methods and write the report")
    p.add_argument("--assert-orderings", action="store_true", help="exit 1 if a benchmark ordering fails")
    p.add_argument("--replicate", type=int, default=None)

    p = sub.add_parser("render", parents=[common], help="SVG of court-projected sequences")
    p.add_argument("files", nargs="+", help="sequence files, generated-sequence directories or dataset directories")
    p.add_argument("-o", "--output", help="SVG path (default: <out>/render.svg)")
    p.add_argument("--scatter", action="store_true", help="plot only start and end points")

    p = sub.add_parser("run", parents=[common], help="gen, train, synth, eval in one go")
    p.add_argument("--assert-orderings", action="store_true")
    return parser


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "synth": cmd_synth, "eval": cmd_eval, "render": cmd_render, "run": cmd_run}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(getattr(args, "config", None))
        if getattr(args, "seed", None) is not None:
            cfg.with_seed(args.seed)
        if getattr(args, "out", None) is not None:
            cfg.out = args.out
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ParseError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
