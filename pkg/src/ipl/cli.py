"""Command-line surface: filter, synth, run, sweep, oracle, diag, report.

Conventions shared by every subcommand:

* with ``--json`` the ONLY bytes on stdout are a single JSON document; all
  human-readable chatter goes to stderr,
* output files are written atomically (temp file + rename),
* expected failures exit nonzero with a one-line message on stderr,
* ``--workers`` defaults to the IPL_WORKERS environment variable when set,
  and both override the config file's value.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import fields, replace
from datetime import datetime, timezone


from ._util import canonical_json, write_json_atomic, write_text_atomic
from .errors import ConfigError, FormatError, IntegrityError, IplError, MissingFileError, StateError
from .prompt import save_prompt
from .scheduler import RunConfig, evaluate, run, selection_oracle, trace_dict
from .selector import SelectedSet, SelectionStep, brute_force_best, epsilon_estimate, greedy_select, marginal_curve
from .store import Store, load_manifest, read_vocab_tsv, save_store, write_vocab_tsv
from .synth import SynthConfig, synth_generate
from .vocab import CandidatePool, FilterConfig, filter_candidates


def _echo(args, text: str) -> None:
    """Human-readable line: stdout normally, stderr under --json."""
    print(text, file=sys.stderr if args.json else sys.stdout)


def _emit_json(args, doc: dict) -> None:
    if args.json:
        sys.stdout.write(canonical_json(doc))


def _resolve_workers(args) -> int | None:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("IPL_WORKERS")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"IPL_WORKERS must be an integer, got {env!r}") from None
    return None


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    workers = _resolve_workers(args)
    if workers is not None:
        cfg = replace(cfg, workers=workers)
    cfg.validate()
    return cfg


def _build_pool(store: Store, pool_path: str | None) -> CandidatePool:
    """Candidate pool from an explicit pool.tsv, else default-filtered vocab."""
    if pool_path is None:
        return filter_candidates(store.vocab, FilterConfig())
    entries = read_vocab_tsv(pool_path)
    words = [m.word for m in entries]
    if len(set(words)) != len(words):
        dup = next(w for i, w in enumerate(words) if w in words[:i])
        raise IntegrityError(f"{pool_path}: duplicate pool word {dup!r}")
    return CandidatePool(entries=entries)


# --------------------------------------------------------------------------
# filter


def cmd_filter(args) -> int:
    raw = read_vocab_tsv(args.vocab)
    cfg = FilterConfig(
        min_length=args.min_length,
        zipf_threshold=args.zipf_threshold,
        require_lexicon=not args.no_lexicon,
        max_pieces=args.max_pieces,
    )
    pool = filter_candidates(raw, cfg)
    write_vocab_tsv(args.out, pool.entries)
    report = {name: count for name, count in pool.rejected.items() if name != "duplicate"}
    if pool.rejected.get("duplicate"):
        report["duplicate"] = pool.rejected["duplicate"]
    report["kept"] = len(pool)
    if args.report:
        write_json_atomic(args.report, report)
    _echo(args, f"kept {len(pool)} of {len(raw)} words -> {args.out}")
    _echo(args, " ".join(f"{k}={v}" for k, v in report.items()))
    _emit_json(args, report)
    return 0


# --------------------------------------------------------------------------
# synth


_SYNTH_FIELDS = {f.name for f in fields(SynthConfig)}


def _load_synth_config(args) -> SynthConfig:
    doc = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise MissingFileError(f"config file not found: {args.config}")
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{args.config}: invalid JSON ({exc})") from None
        unknown = set(doc) - _SYNTH_FIELDS
        if unknown:
            raise ConfigError(f"unknown synth config keys {sorted(unknown)}")
        if "attribute_assignment" in doc and doc["attribute_assignment"] is not None:
            doc["attribute_assignment"] = tuple(doc["attribute_assignment"])
    for name in (
        "classes",
        "dim",
        "attributes",
        "images_per_class",
        "noise",
        "distractors",
        "duplicate_planted",
    ):
        value = getattr(args, name)
        if value is not None:
            doc[name] = value
    return SynthConfig(**doc)


def cmd_synth(args) -> int:
    cfg = _load_synth_config(args)
    seed = args.seed if args.seed is not None else 0
    store = synth_generate(cfg, seed)
    save_store(store, args.out)
    summary = {
        "out": args.out,
        "classes": store.dataset.n_classes,
        "dim": store.dim,
        "images": store.images.rows,
        "vocab": len(store.vocab),
        "seed": seed,
    }
    _echo(args, f"wrote store with {summary['images']} images, {summary['vocab']} vocab words -> {args.out}")
    _emit_json(args, summary)
    return 0


# --------------------------------------------------------------------------
# run


def _gains_csv(selection: SelectedSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "gain", "delta_utility", "delta_redundancy"])
    for i, step in enumerate(selection.steps, start=1):
        writer.writerow([i, repr(step.gain), repr(step.delta_utility), repr(step.delta_redundancy)])
    return buf.getvalue()


def _execute_run(store: Store, pool: CandidatePool, cfg: RunConfig, out: str):
    trace = run(store, pool, cfg)
    metrics = evaluate(store, trace.final_state, cfg.tau)
    os.makedirs(out, exist_ok=True)
    write_text_atomic(os.path.join(out, "trace.json"), canonical_json(trace_dict(trace)))
    write_json_atomic(os.path.join(out, "metrics.json"), {"base": metrics.base, "novel": metrics.novel, "hm": metrics.hm})
    write_text_atomic(os.path.join(out, "selected.txt"), "".join(w + "\n" for w in trace.selection.words))
    write_text_atomic(os.path.join(out, "gains.csv"), _gains_csv(trace.selection))
    save_prompt(trace.final_state, os.path.join(out, "prompt.json"))
    return trace, metrics


def cmd_run(args) -> int:
    cfg = _load_run_config(args)
    store = load_manifest(args.store)
    pool = _build_pool(store, args.pool)
    trace, metrics = _execute_run(store, pool, cfg, args.out)
    _echo(
        args,
        f"selected [{', '.join(trace.selection.words)}] "
        f"base={metrics.base:.2f} novel={metrics.novel:.2f} hm={metrics.hm:.2f} -> {args.out}",
    )
    _emit_json(
        args,
        {
            "out": args.out,
            "selected": list(trace.selection.words),
            "metrics": {"base": metrics.base, "novel": metrics.novel, "hm": metrics.hm},
        },
    )
    return 0


# --------------------------------------------------------------------------
# sweep


_AXES = {"k": ("k", int), "t": ("interval", int), "lambda": ("diversity", float)}


def cmd_sweep(args) -> int:
    if args.axis not in _AXES:
        raise ConfigError(f"sweep axis must be one of {sorted(_AXES)}, got {args.axis!r}")
    attr, cast = _AXES[args.axis]
    try:
        values = [cast(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {args.values!r}: {exc}") from None
    if not values:
        raise ConfigError("no sweep values given")
    if len(set(values)) != len(values):
        raise ConfigError("sweep values must be distinct")

    base_cfg = _load_run_config(args)
    store = load_manifest(args.store)
    pool = _build_pool(store, args.pool)

    subdirs = [os.path.join(args.out, f"{args.axis}={value}") for value in values]
    for sub in subdirs:
        if os.path.exists(sub):
            raise StateError(f"output directory already exists: {sub}")

    rows = []
    for value, sub in zip(values, subdirs):
        cfg = replace(base_cfg, **{attr: value})
        cfg.validate()
        trace, metrics = _execute_run(store, pool, cfg, sub)
        final_loss = trace.epoch_log[-1].loss if trace.epoch_log else float("nan")
        rows.append({"value": value, "base": metrics.base, "novel": metrics.novel, "hm": metrics.hm, "final_train_loss": final_loss})
        _echo(args, f"{args.axis}={value}: hm={metrics.hm:.2f} final_train_loss={final_loss:.6f}")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["value", "base", "novel", "hm", "final_train_loss"])
    for row in rows:
        writer.writerow([row["value"], repr(row["base"]), repr(row["novel"]), repr(row["hm"]), repr(row["final_train_loss"])])
    os.makedirs(args.out, exist_ok=True)
    write_text_atomic(os.path.join(args.out, "summary.csv"), buf.getvalue())

    # Recommendation uses training loss only; test metrics never participate.
    recommended = min(rows, key=lambda r: (math.isnan(r["final_train_loss"]), r["final_train_loss"]))["value"]
    _echo(args, f"recommended {args.axis}={recommended} (lowest final training loss)")
    _emit_json(args, {"axis": args.axis, "rows": rows, "recommended": recommended})
    return 0


# --------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    cfg = _load_run_config(args)
    store = load_manifest(args.store)
    pool = _build_pool(store, args.pool)
    words = pool.words()
    if args.pool_limit is not None:
        words = words[: args.pool_limit]
    k = args.k if args.k is not None else cfg.k
    oracle = selection_oracle(store, cfg)

    selection = greedy_select(words, k, oracle, workers=cfg.workers, lazy=args.lazy)
    greedy_value = oracle.value(selection.words)
    best_subset, best_value = brute_force_best(words, k, oracle)
    ratio = greedy_value / best_value if best_value != 0 else None
    report = {
        "greedy_value": greedy_value,
        "optimal_value": best_value,
        "optimal_subset": list(best_subset),
        "ratio": ratio,
        "trace": [
            {"word": s.word, "gain": s.gain, "delta_utility": s.delta_utility, "delta_redundancy": s.delta_redundancy}
            for s in selection.steps
        ],
    }
    if args.out:
        write_json_atomic(args.out, report)
    ratio_text = "n/a" if ratio is None else f"{ratio:.4f}"
    _echo(args, f"greedy={greedy_value:.6f} optimal={best_value:.6f} ratio={ratio_text}")
    _emit_json(args, report)
    return 0


# --------------------------------------------------------------------------
# diag


def _selection_from_trace(path: str) -> SelectedSet:
    if not os.path.isfile(path):
        raise MissingFileError(f"trace file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
    steps = []
    for s in doc.get("selection", []):
        steps.append(
            SelectionStep(
                word=s["word"],
                token_id=s.get("token_id", s["word"]),
                gain=float(s["gain"]),
                delta_utility=float(s["delta_utility"]),
                delta_redundancy=float(s["delta_redundancy"]),
                pool_size_before=int(s.get("pool_size_before", 0)),
            )
        )
    return SelectedSet(steps=tuple(steps))


def cmd_diag(args) -> int:
    cfg = _load_run_config(args)
    store = load_manifest(args.store)
    pool = _build_pool(store, args.pool)
    oracle = selection_oracle(store, cfg)

    if args.trace:
        selection = _selection_from_trace(args.trace)
    else:
        selection = greedy_select(pool.words(), cfg.k, oracle, workers=cfg.workers)

    if selection.steps:
        gains, slope = marginal_curve(selection)
    else:
        gains, slope = [], None
    epsilon = epsilon_estimate(oracle, pool.words(), samples=args.samples, seed=cfg.seed)

    doc = {
        "gains": gains,
        "slope": slope,
        "epsilon": epsilon,
        "samples": args.samples,
        "pool_size": len(pool),
    }
    out = args.out or "diag.json"
    write_json_atomic(out, doc)
    if args.curve:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "gain"])
        for i, g in enumerate(gains, start=1):
            writer.writerow([i, repr(g)])
        write_text_atomic(args.curve, buf.getvalue())
    slope_text = "n/a" if slope is None else f"{slope:.6f}"
    _echo(args, f"gains={len(gains)} slope={slope_text} epsilon={epsilon:.6g} -> {out}")
    _emit_json(args, doc)
    return 0


# --------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    trace_path = os.path.join(args.run, "trace.json")
    metrics_path = os.path.join(args.run, "metrics.json")
    if not os.path.isfile(trace_path):
        raise MissingFileError(f"trace file not found: {trace_path}")
    if not os.path.isfile(metrics_path):
        raise MissingFileError(f"metrics file not found: {metrics_path}")
    with open(trace_path, "r", encoding="utf-8") as fh:
        trace_doc = json.load(fh)
    with open(metrics_path, "r", encoding="utf-8") as fh:
        metrics = json.load(fh)

    config = trace_doc.get("config", {})
    config_hash = hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()
    selection = _selection_from_trace(trace_path)
    gains, slope = marginal_curve(selection) if selection.steps else ([], None)

    doc = {
        "config_hash": config_hash,
        "seed": config.get("seed"),
        "created": datetime.now(timezone.utc).isoformat(),
        "metrics": metrics,
        "gain_curve": {"gains": gains, "slope": slope},
    }
    diag_path = os.path.join(args.run, "diag.json")
    if os.path.isfile(diag_path):
        with open(diag_path, "r", encoding="utf-8") as fh:
            doc["epsilon"] = json.load(fh).get("epsilon")
    oracle_path = os.path.join(args.run, "oracle.json")
    if os.path.isfile(oracle_path):
        with open(oracle_path, "r", encoding="utf-8") as fh:
            doc["oracle_ratio"] = json.load(fh).get("ratio")

    out = args.out or os.path.join(args.run, "report.json")
    write_json_atomic(out, doc)
    _echo(args, f"report -> {out}")
    _emit_json(args, doc)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--workers", type=int, default=None, help="parallel candidate evaluation degree")
    common.add_argument("--json", action="store_true", help="emit a single JSON document on stdout")

    parser = argparse.ArgumentParser(prog="ipl", description="semantic token selection + soft prompt optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", parents=[common], help="filter raw vocabulary into a candidate pool")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="also write the rejection report JSON here")
    p.add_argument("--min-length", type=int, default=3)
    p.add_argument("--zipf-threshold", type=float, default=3.5)
    p.add_argument("--max-pieces", type=int, default=1)
    p.add_argument("--no-lexicon", action="store_true", help="drop the lexicon-membership requirement")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("synth", parents=[common], help="generate a planted-attribute synthetic store")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="SynthConfig JSON; flags below override")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--attributes", type=int, default=None)
    p.add_argument("--images-per-class", dest="images_per_class", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--distractors", type=int, default=None)
    p.add_argument("--duplicate-planted", dest="duplicate_planted", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", parents=[common], help="run the full alternating schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pool", default=None, help="pool.tsv from `ipl filter`; default filters store vocab")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="sweep k, t, or lambda; recommend by training loss")
    p.add_argument("--axis", required=True, choices=sorted(_AXES))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--config", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pool", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", parents=[common], help="greedy vs brute-force objective comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--k", type=int, default=None, help="budget; default from config")
    p.add_argument("--pool", default=None)
    p.add_argument("--pool-limit", type=int, default=None, help="only consider the first N pool words")
    p.add_argument("--out", default=None, help="write the JSON report here (e.g. RUN/oracle.json)")
    p.add_argument(
        "--lazy",
        action="store_true",
        help="stale-bound greedy shortcut; exact only for submodular objectives, heuristic here",
    )
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("diag", parents=[common], help="gain curve + approximate-submodularity probe")
    p.add_argument("--config", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--trace", default=None, help="trace.json of a completed run; default reruns selection")
    p.add_argument("--pool", default=None)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--out", default=None, help="diag JSON path (default diag.json)")
    p.add_argument("--curve", default=None, help="also write a step,gain CSV here")
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("report", parents=[common], help="assemble a run report from output files")
    p.add_argument("--run", required=True, help="run output directory")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IplError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
