"""Command-line front end: ``dynblock {fit,temporal,predict,generate,verify}``.

Reports are JSON with floats printed to 17 significant digits; partitions
and order tables are TSV. Exit codes: 0 success, 2 usage error, 3 input
error, 4 numerical or invariant error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .continuous import WaitModel, prepare_waits
from .core import (
    Sequence,
    annotate_epochs,
    build_chain,
    read_edge_tsv,
    read_epochs,
    read_records,
    read_waits,
    tokenize_records,
)
from .dl import LN2, Partition, PriorConfig, total_dl
from .errors import ConfigError, DynBlockError, InputError, InvariantError
from .inference import FitConfig, agglomerative_search, fit_fixed, order_scan
from .predict import Constraints, SplitSpec, generate_sequence, holdout_bound, holdout_bound_temporal
from .temporal import joint_fit, temporal_dl

SEED_ENV = "DYNBLOCK_SEED"
VERIFY_TOL = 1e-6

TEMPORAL_KEYS = frozenset({
    "command", "version", "seed", "config", "dataset", "order", "C", "B_N", "B_M",
    "total_nats", "breakdown_nats", "breakdown_bits", "node_groups", "label_partition", "wall_seconds",
})


class UsageError(ConfigError):
    pass


# ------------------------------------------------------------------ JSON
def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return {True: "true", False: "false", None: "null"}[v]
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return "null"
        return format(v, ".17g")
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, dict):
        return "{" + ", ".join(f"{_fmt(str(k))}: {_fmt(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def dumps(obj) -> str:
    """JSON text with every float at 17 significant digits (bit-exact on reload)."""
    return _fmt(obj) + "\n"


def loads(text: str):
    return json.loads(text)


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# --------------------------------------------------------------- parsing
def _order_range(text: str) -> tuple[int, int]:
    try:
        a, b = text.split("..")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None


def _default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--restarts", type=int, default=4, help="independent ladder runs (default 4)")
    p.add_argument("--sweeps", type=int, default=10, help="greedy sweeps per ladder level (default 10)")
    p.add_argument("--k-prior", choices=("uniform", "hyperprior"), default="hyperprior",
                   help="prior for token counts inside groups (default hyperprior)")
    p.add_argument("--units", choices=("nats", "bits"), default="nats", help="units of printed totals")
    p.add_argument("--unified", action="store_true", help="one shared token/memory partition (order 1 only)")
    p.add_argument("--report", default="-", help="JSON report path ('-' for stdout)")
    p.add_argument("--profile", action="store_true", help="add per-phase timings to the report and stderr")


def _sequence_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("sequence", help="token file: whitespace-separated tokens, one record per line")
    p.add_argument("--char-level", action="store_true", help="every character is a token")
    p.add_argument("--separator", choices=("auto", "insert", "none"), default="auto",
                   help="record separator token (auto: insert when there is more than one record)")
    p.add_argument("--waits", help="waiting-time file, one value per transition")
    p.add_argument("--wait-mode", choices=("per-memory", "per-group"), default=None,
                   help="waiting-time rates per memory or per memory group")
    p.add_argument("--bursty", action="store_true", help="use log-transformed (Pareto) waiting times")
    p.add_argument("--epochs", help="epoch labels laid out like the sequence file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynblock", description="Markov chains with communities: fit, "
                                 "temporal networks, held-out prediction and sampling.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a partition to a token sequence")
    _sequence_inputs(f)
    g = f.add_mutually_exclusive_group()
    g.add_argument("--order", type=int, default=None, help="Markov order (default 1)")
    g.add_argument("--order-scan", type=_order_range, default=None, metavar="A..B",
                   help="fit every order in A..B and keep the shortest description")
    f.add_argument("--groups", type=int, choices=(1,), default=None,
                   help="evaluate the single-group partition instead of searching")
    f.add_argument("--partition", help="TSV dump of the fitted partition (side, item, group)")
    f.add_argument("--order-table", help="TSV dump of the order scan")
    f.add_argument("--constraints-out", help="write the fitted count constraints for 'generate'")
    f.add_argument("--verify", action="store_true", help="re-verify the written report from scratch")
    _common(f)

    t = sub.add_parser("temporal", help="fit the temporal network model to an edge stream")
    t.add_argument("edges", help="TSV: source<TAB>target[<TAB>time], time ordered")
    t.add_argument("--order", type=int, default=1, help="label-chain order; 0 is the static model")
    t.add_argument("--directed", action="store_true")
    t.add_argument("--partition", help="TSV dump of node groups")
    _common(t)

    pr = sub.add_parser("predict", help="held-out predictive bound on the tail of the data")
    pr.add_argument("data", help="token file, or edge TSV with --temporal")
    pr.add_argument("--temporal", action="store_true", help="treat the input as an edge stream")
    pr.add_argument("--directed", action="store_true")
    pr.add_argument("--order", type=int, default=1)
    pr.add_argument("--split", type=float, default=0.5, help="training fraction (default 0.5)")
    pr.add_argument("--char-level", action="store_true")
    pr.add_argument("--separator", choices=("auto", "insert", "none"), default="auto")
    _common(pr)

    ge = sub.add_parser("generate", help="sample a sequence with the counts of a fit")
    src = ge.add_mutually_exclusive_group(required=True)
    src.add_argument("--from-report", help="fit report (its input is re-read)")
    src.add_argument("--constraints", help="constraint JSON written by 'fit --constraints-out'")
    ge.add_argument("--seed", type=int, default=None)
    ge.add_argument("--out", default="-", help="output sequence file ('-' for stdout)")

    v = sub.add_parser("verify", help="recompute a fit report's total from its input")
    v.add_argument("report")
    return ap


# ------------------------------------------------------------- loading
def _load_sequence(args) -> Sequence:
    records = read_records(args.sequence if hasattr(args, "sequence") else args.data, args.char_level)
    if not records:
        raise InputError("empty sequence file")
    insert = args.separator == "insert" or (args.separator == "auto" and len(records) > 1)
    alphabet, seq = tokenize_records(records, "insert_separator" if insert else "none")
    waits = None
    if getattr(args, "waits", None):
        waits = prepare_waits(read_waits(args.waits), bursty=args.bursty)
    epochs = None
    if getattr(args, "epochs", None):
        lab = read_epochs(args.epochs)
        if len(lab) != len(records):
            raise InputError(f"{len(lab)} epoch records for {len(records)} token records")
        flat = []
        for rec, ep in zip(records, lab):
            if len(rec) != len(ep):
                raise InputError("every token needs exactly one epoch label")
            flat.extend(ep)
            if insert:
                flat.append(ep[-1])
        epochs = flat
    seq = Sequence(seq.tokens, alphabet, waits)
    if epochs is not None:
        seq = annotate_epochs(seq, epochs)
    return seq


def _fit_config(args, order: int) -> FitConfig:
    seed = args.seed if args.seed is not None else _default_seed()
    return FitConfig(seed=seed, restarts=args.restarts, sweeps_per_level=args.sweeps,
                     unified=args.unified, order=order)


def _prior(args) -> PriorConfig:
    return PriorConfig("uniform" if args.k_prior == "uniform" else "degree_hyperprior")


def _wait_model(args) -> Optional[WaitModel]:
    if not getattr(args, "waits", None):
        if getattr(args, "wait_mode", None) or getattr(args, "bursty", False):
            raise UsageError("--wait-mode and --bursty need --waits")
        return None
    mode = (args.wait_mode or "per-memory").replace("-", "_")
    return WaitModel(mode=mode, bursty=args.bursty)


def _breakdowns(bd) -> dict:
    return {"breakdown_nats": bd.to_dict("nats"), "breakdown_bits": bd.to_dict("bits")}


def _partition_dict(part: Partition) -> dict:
    return {"token_groups": part.token_groups.tolist(), "memory_groups": part.memory_groups.tolist(),
            "unified": part.unified}


# ------------------------------------------------------------ commands
def run_fit(args, argv) -> dict:
    t0 = time.perf_counter()
    if args.unified and (args.order_scan is not None and args.order_scan != (1, 1)
                         or args.order not in (None, 1)):
        raise UsageError("--unified is only defined for order 1")
    seq = _load_sequence(args)
    t_load = time.perf_counter()
    prior = _prior(args)
    wm = _wait_model(args)
    order = args.order if args.order is not None else 1
    if order < 1:
        raise UsageError("sequence order must be >= 1")
    cfg = _fit_config(args, order)
    timings = {"load": t_load - t0}
    if args.order_scan is not None:
        a, b = args.order_scan
        if args.groups is not None:
            raise UsageError("--groups cannot be combined with --order-scan")
        try:
            res = order_scan(seq, a, b, cfg, prior, wm)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        offset = b
    else:
        offset = 0
        chain = build_chain(seq, order)
        timings["count_build"] = time.perf_counter() - t_load
        if args.groups == 1:
            res = fit_fixed(chain, Partition.trivial(chain, args.unified), prior, wm)
        else:
            res = agglomerative_search(chain, cfg, prior, wm)
    timings.update(res.timings)
    chain = build_chain(seq, res.order, offset=offset)
    wait_beta = None
    if wm is not None:
        # order_scan resolves beta on the lowest order and shares it
        ref = build_chain(seq, args.order_scan[0], offset=offset) if args.order_scan else chain
        wm = wm.resolved(ref)
        wait_beta = wm.beta
    report = {
        "command": list(argv),
        "version": __version__,
        "seed": cfg.seed,
        "config": {
            "restarts": cfg.restarts, "sweeps_per_level": cfg.sweeps_per_level, "unified": cfg.unified,
            "k_prior": args.k_prior, "units": args.units, "separator": args.separator,
            "char_level": args.char_level, "offset": offset, "groups": args.groups,
            "waits": args.waits, "wait_mode": None if wm is None else wm.mode, "wait_beta": wait_beta, "bursty": args.bursty,
            "epochs": args.epochs,
        },
        "dataset": {"input": str(Path(args.sequence).resolve()), "T": len(seq), "N": seq.N,
                    "E": chain.E, "M": chain.M},
        "order": res.order,
        "B_N": res.B_N,
        "B_M": res.B_M,
        "accept_rate": res.accept_rate,
        "total_nats": res.total,
        "total": res.total / LN2 if args.units == "bits" else res.total,
        **_breakdowns(res.breakdown),
        "order_table": res.order_table,
        "partition": _partition_dict(res.partition),
        "wall_seconds": time.perf_counter() - t0,
    }
    if args.profile:
        report["timings"] = timings
        for k, v in timings.items():
            print(f"{k}\t{v:.3f}s", file=sys.stderr)
    if args.partition:
        _write_partition(args.partition, seq, chain, res.partition)
    if args.order_table and res.order_table:
        cols = list(res.order_table[0])
        lines = ["\t".join(cols)] + ["\t".join(_cell(r[c]) for c in cols) for r in res.order_table]
        _write(args.order_table, "\n".join(lines) + "\n")
    if args.constraints_out:
        _write(args.constraints_out, Constraints.from_fit(chain, res.partition).to_json() + "\n")
    return report


def _cell(v) -> str:
    return format(float(v), ".17g") if isinstance(v, (float, np.floating)) else str(v)


def _write_partition(path: str, seq: Sequence, chain, part: Partition) -> None:
    lab = seq.alphabet.label if seq.alphabet is not None else str
    lines = ["side\titem\tgroup"]
    for x, g in enumerate(part.token_groups):
        lines.append(f"token\t{lab(x)}\t{g}")
    if not part.unified:
        for m, g in enumerate(part.memory_groups):
            w = "|".join(lab(int(v)) for v in chain.memories[m])
            lines.append(f"memory\t{w}\t{g}")
    _write(path, "\n".join(lines) + "\n")


def verify_report(report: dict) -> float:
    """Recompute the total of a fit report from its input; returns the absolute error."""
    cfg = report["config"]
    ns = argparse.Namespace(sequence=report["dataset"]["input"], char_level=cfg["char_level"],
                            separator=cfg["separator"], waits=cfg["waits"], bursty=cfg["bursty"],
                            epochs=cfg["epochs"], wait_mode=None)
    seq = _load_sequence(ns)
    chain = build_chain(seq, report["order"], offset=cfg["offset"])
    p = report["partition"]
    if p["unified"]:
        part = Partition.unified_from(chain, p["token_groups"])
    else:
        part = Partition(p["token_groups"], p["memory_groups"])
    prior = PriorConfig("uniform" if cfg["k_prior"] == "uniform" else "degree_hyperprior")
    wm = None
    if cfg["wait_mode"] is not None:
        wm = WaitModel(cfg["wait_mode"], beta=cfg["wait_beta"], bursty=cfg["bursty"])
    total = total_dl(chain, part, prior, wm).total
    err = abs(total - report["total_nats"])
    if not err <= VERIFY_TOL:
        raise InvariantError(f"report total {report['total_nats']} but scratch recompute gives {total}")
    return err


def run_temporal(args, argv) -> dict:
    t0 = time.perf_counter()
    if args.unified and args.order != 1:
        raise UsageError("--unified is only defined for order 1")
    if args.order < 0:
        raise UsageError("order must be >= 0")
    stream = read_edge_tsv(args.edges, args.directed)
    cfg = _fit_config(args, max(args.order, 1))
    prior = _prior(args)
    fit = joint_fit(stream, args.order, cfg, prior, args.unified)
    report = {
        "command": list(argv),
        "version": __version__,
        "seed": cfg.seed,
        "config": {"restarts": cfg.restarts, "sweeps_per_level": cfg.sweeps_per_level,
                   "unified": args.unified, "k_prior": args.k_prior, "units": args.units,
                   "directed": args.directed},
        "dataset": {"input": str(Path(args.edges).resolve()), "N": stream.N, "E": stream.E},
        "order": args.order,
        "C": fit.C,
        "total_nats": fit.total,
        **_breakdowns(fit.breakdown),
        "node_groups": fit.node_groups.tolist(),
        "wall_seconds": 0.0,
    }
    if args.order >= 1:
        report["B_N"] = fit.B_N
        report["B_M"] = fit.B_M
        report["label_partition"] = {
            "labels": [[int(a), int(b)] for a, b in fit.label_keys],
            **_partition_dict(fit.label_partition),
        }
    if args.partition:
        lines = ["node\tgroup"] + [f"{v}\t{g}" for v, g in zip(stream.nodes, fit.node_groups)]
        _write(args.partition, "\n".join(lines) + "\n")
    report["wall_seconds"] = time.perf_counter() - t0
    if args.profile:
        report["timings"] = fit.timings
        for k, v in fit.timings.items():
            print(f"{k}\t{v:.3f}s", file=sys.stderr)
    return report


def run_predict(args, argv) -> dict:
    t0 = time.perf_counter()
    split = SplitSpec(args.split)
    cfg = _fit_config(args, max(args.order, 1))
    prior = _prior(args)
    if args.temporal:
        if args.order < 0:
            raise UsageError("order must be >= 0")
        if args.unified and args.order != 1:
            raise UsageError("--unified is only defined for order 1")
        data = read_edge_tsv(args.data, args.directed)
        res = holdout_bound_temporal(data, split, args.order, cfg, prior, args.unified)
        digest = {"input": str(Path(args.data).resolve()), "N": data.N, "E": data.E}
    else:
        if args.order < 1:
            raise UsageError("sequence order must be >= 1")
        if args.unified and args.order != 1:
            raise UsageError("--unified is only defined for order 1")
        seq = _load_sequence(args)
        res = holdout_bound(seq, split, args.order, cfg, prior)
        digest = {"input": str(Path(args.data).resolve()), "T": len(seq), "N": seq.N}
    scale = 1.0 / LN2 if args.units == "bits" else 1.0
    return {
        "command": list(argv),
        "version": __version__,
        "seed": cfg.seed,
        "config": {"split": args.split, "restarts": cfg.restarts, "k_prior": args.k_prior,
                   "unified": args.unified, "temporal": args.temporal, "units": args.units},
        "dataset": digest,
        "order": args.order,
        "delta_sigma": res.delta_sigma * scale,
        "log_bound": res.log_bound * scale,
        "per_event": res.per_event * scale,
        "E_valid": res.E_valid,
        "train_total": res.train_total * scale,
        "full_total": res.full_total * scale,
        "wall_seconds": time.perf_counter() - t0,
    }


def run_generate(args, argv) -> str:
    seed = args.seed if args.seed is not None else _default_seed()
    labels = None
    if args.constraints:
        con = Constraints.from_json(Path(args.constraints).read_text(encoding="utf-8"))
    else:
        report = loads(Path(args.from_report).read_text(encoding="utf-8"))
        cfg = report["config"]
        ns = argparse.Namespace(sequence=report["dataset"]["input"], char_level=cfg["char_level"],
                                separator=cfg["separator"], waits=None, bursty=False,
                                epochs=cfg["epochs"], wait_mode=None)
        seq = _load_sequence(ns)
        chain = build_chain(seq, report["order"], offset=cfg["offset"])
        p = report["partition"]
        part = (Partition.unified_from(chain, p["token_groups"]) if p["unified"]
                else Partition(p["token_groups"], p["memory_groups"]))
        con = Constraints.from_fit(chain, part)
        labels = seq.alphabet.label if seq.alphabet is not None else None
    out = generate_sequence(con, np.random.default_rng(seed))
    lab = labels or str
    return " ".join(lab(int(x)) for x in out.tokens) + "\n"


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "fit":
            report = run_fit(args, argv)
            _write(args.report, dumps(report))
            if args.verify:
                if args.report in (None, "-"):
                    verify_report(loads(dumps(report)))
                else:
                    verify_report(loads(Path(args.report).read_text(encoding="utf-8")))
        elif args.command == "temporal":
            _write(args.report, dumps(run_temporal(args, argv)))
        elif args.command == "predict":
            _write(args.report, dumps(run_predict(args, argv)))
        elif args.command == "generate":
            _write(args.out, run_generate(args, argv))
        elif args.command == "verify":
            err = verify_report(loads(Path(args.report).read_text(encoding="utf-8")))
            print(f"ok\t{err:.3g}")
    except DynBlockError as exc:
        print(f"dynblock: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"dynblock: error: {exc}", file=sys.stderr)
        return 3
    except (KeyError, ValueError) as exc:
        print(f"dynblock: error: malformed input: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
