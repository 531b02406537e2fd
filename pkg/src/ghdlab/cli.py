"""Batch experiment runner: one binary, five subcommands, seeded throughout.

Every run emits a self-describing record (schema, version, full config echo)
so that any output can be reproduced from its own header.  Exit status is 0
only if every asserted invariant or bound verdict in the run held.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from datetime import datetime, timezone
from fractions import Fraction

import numpy as np

from . import __version__
from .concentration import default_sweep, run_named_check
from .instances import (
    BitString,
    CubePromise,
    PromiseUnreachableError,
    SpherePromise,
    ghd_label,
    ghs_label,
    hamming_distance,
    sample_promise,
)
from .protocols import (
    FixedDistanceCubePairs,
    UniformCubePairs,
    constant_protocol,
    evaluate_error,
    majority_error,
    first_bit_then_trivial,
    prefix_exchange_protocol,
    protocol_from_json,
    sampling_protocol,
    trivial_protocol,
)
from .rng import RandomSource
from .round_elim import full_elimination, trajectory_rows
from .round_elim import InvariantViolation
from .streaming import (
    ExactF0,
    KmvF0,
    accuracy_requirement_check,
    exact_f0,
    simulate_passes,
    stream_from_csv,
)

RECORD_SCHEMA = "ghdlab/record-v1"


def _seed_default() -> int:
    env = os.environ.get("GHDLAB_SEED")
    return int(env) if env else 0


def add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed (default: $GHDLAB_SEED or 0)")
    p.add_argument("--trials", type=int, default=100_000, help="Monte Carlo trials")
    p.add_argument("--workers", type=int, default=1, help="parallel trial workers")
    p.add_argument("--out", default="-", help="output path ('-' = stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--timestamp", action="store_true",
                   help="stamp wall-clock time into the record (off keeps "
                        "outputs byte-identical across reruns)")


def make_record(command: str, args: argparse.Namespace, payload) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return {
        "schema": RECORD_SCHEMA,
        "version": __version__,
        "command": command,
        "config": config,
        "timestamp": datetime.now(timezone.utc).isoformat() if args.timestamp else None,
        "payload": payload,
    }


def emit(args: argparse.Namespace, record: dict, csv_rows=None) -> None:
    if args.format == "csv":
        if not csv_rows:
            raise SystemExit("this payload has no CSV form; use --format json")
        buf = io.StringIO()
        header = {k: v for k, v in record.items() if k != "payload"}
        buf.write(f"# {json.dumps(header, sort_keys=True)}\n")
        writer = csv.DictWriter(buf, fieldnames=list(csv_rows[0].keys()))
        writer.writeheader()
        writer.writerows(csv_rows)
        text = buf.getvalue()
    else:
        text = json.dumps(record, indent=2) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)


def _rng(args: argparse.Namespace) -> RandomSource:
    return RandomSource(args.seed if args.seed is not None else _seed_default())


# ---------------------------------------------------------------------------
# gen: sample labeled promise instances
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    rng = _rng(args)
    rows = []
    if args.domain == "cube":
        if args.g is None:
            raise SystemExit("gen --domain cube needs --g")
        try:
            promise = CubePromise(args.n, args.g)
        except ValueError as exc:
            raise SystemExit(f"invalid promise: {exc}")
        for i in range(args.count):
            sub = rng.split(i)
            try:
                x, y = sample_promise(promise, sub)
            except PromiseUnreachableError as exc:
                raise SystemExit(str(exc))
            rows.append(
                {
                    "x": x.to_json(),
                    "y": y.to_json(),
                    "dist": hamming_distance(x, y),
                    "label": ghd_label(x, y, promise),
                    "seed": sub.seed,
                    "stream": sub.stream,
                }
            )
        csv_rows = [
            {"n": args.n, "x_hex": r["x"]["hex"], "y_hex": r["y"]["hex"],
             "dist": r["dist"], "label": r["label"],
             "seed": r["seed"], "stream": r["stream"]}
            for r in rows
        ]
    else:
        if args.gamma is None:
            raise SystemExit("gen --domain sphere needs --gamma")
        try:
            promise = SpherePromise(args.n, args.gamma)
        except ValueError as exc:
            raise SystemExit(f"invalid promise: {exc}")
        for i in range(args.count):
            sub = rng.split(i)
            try:
                x, y = sample_promise(promise, sub)
            except PromiseUnreachableError as exc:
                raise SystemExit(str(exc))
            rows.append(
                {
                    "x": x.to_json(),
                    "y": y.to_json(),
                    "ip": x.dot(y),
                    "label": ghs_label(x, y, promise),
                    "seed": sub.seed,
                    "stream": sub.stream,
                }
            )
        csv_rows = None
    emit(args, make_record("gen", args, rows), csv_rows)
    return 0


# ---------------------------------------------------------------------------
# protocol: evaluate builtin or serialized protocols
# ---------------------------------------------------------------------------


def _grid(spec: str) -> list[int]:
    """start:stop:step, stop inclusive when it lies on the grid."""
    parts = [int(v) for v in spec.split(":")]
    if len(parts) == 1:
        return parts
    start, stop = parts[0], parts[1]
    step = parts[2] if len(parts) > 2 else 1
    return list(range(start, stop + 1, step))


def _sampling_distances(n: int, gamma: float) -> tuple[int, int]:
    lo, hi = (0.5 - gamma) * n, (0.5 + gamma) * n
    if abs(lo - round(lo)) > 1e-9:
        raise SystemExit(f"(1/2 - gamma) * n = {lo} is not an integer; adjust --n")
    return int(round(lo)), int(round(hi))


def cmd_protocol(args) -> int:
    rng = _rng(args)
    if args.protocol_file:
        try:
            with open(args.protocol_file) as fh:
                P = protocol_from_json(json.load(fh))
        except (OSError, ValueError, KeyError) as exc:
            raise SystemExit(f"malformed protocol file: {exc}")
        n = P.alice_domain.n
        dist = UniformCubePairs(n, CubePromise(n, args.g) if args.g else None)
        rep = evaluate_error(P, dist, args.convention, args.method,
                             args.trials, rng, args.workers)
        emit(args, make_record("protocol", args, rep.to_json()))
        return 0
    if args.protocol in ("trivial", "constant0"):
        if args.n is None:
            raise SystemExit("builtin protocols need --n")
        P = trivial_protocol(args.n) if args.protocol == "trivial" else constant_protocol(args.n)
        dist = UniformCubePairs(args.n, CubePromise(args.n, args.g) if args.g else None)
        rep = evaluate_error(P, dist, args.convention, args.method,
                             args.trials, rng, args.workers)
        emit(args, make_record("protocol", args, rep.to_json()))
        return 0
    if args.protocol == "sampling":
        if args.n is None or args.gamma is None:
            raise SystemExit("sampling protocol needs --n and --gamma")
        ms = _grid(args.m_grid) if args.m_grid else [args.m]
        if any(m is None or m < 1 or m % 2 == 0 for m in ms):
            raise SystemExit("sampling needs odd --m (or an odd-valued --m-grid)")
        d_lo, d_hi = _sampling_distances(args.n, args.gamma)
        dist = FixedDistanceCubePairs(args.n, (d_lo, d_hi))
        rows = []
        for i, m in enumerate(ms):
            P = sampling_protocol(args.gamma, m, args.n, coin=rng.split(10_000 + i))
            rep = evaluate_error(P, dist, "sign", "monte-carlo",
                                 args.trials, rng.split(i), args.workers)
            rows.append(
                {
                    "m": m,
                    "error": rep.error_probability,
                    "half_width": rep.half_width,
                    "exact_binomial": majority_error(m, 0.5 - args.gamma),
                    "max_cost": rep.max_cost,
                }
            )
        emit(args, make_record("protocol", args, rows), rows)
        return 0
    raise SystemExit(f"unknown protocol {args.protocol!r}")


# ---------------------------------------------------------------------------
# roundelim: full elimination trajectories
# ---------------------------------------------------------------------------


def cmd_roundelim(args) -> int:
    if args.protocol_file:
        try:
            with open(args.protocol_file) as fh:
                P = protocol_from_json(json.load(fh))
        except (OSError, ValueError, KeyError) as exc:
            raise SystemExit(f"malformed protocol file: {exc}")
        k = args.k if args.k is not None else P.n_rounds
    else:
        if args.n is None or args.k is None:
            raise SystemExit("roundelim needs --n and --k (or --protocol-file)")
        if args.demo == "first-bit":
            P = first_bit_then_trivial(args.n)
            k = 2
        else:
            P = prefix_exchange_protocol(args.n, args.k, args.c1 or 1)
            k = args.k
    n = P.alice_domain.n
    if n > args.max_exhaustive_n:
        raise SystemExit(
            f"n={n} exceeds the exhaustive cap {args.max_exhaustive_n}; "
            "round elimination runs in exact mode only"
        )
    dist = UniformCubePairs(n, CubePromise(n, args.g) if args.g else None)
    try:
        final, reports = full_elimination(P, dist, k, convention=args.convention,
                                          d1=args.d1)
    except InvariantViolation as exc:
        raise SystemExit(f"invariant violated: {exc}")
    rows = trajectory_rows(reports)
    payload = {
        "protocol": P.name,
        "final_rounds": final.n_rounds,
        "steps": [r.to_json() for r in reports],
    }
    emit(args, make_record("roundelim", args, payload), rows)
    return 0


# ---------------------------------------------------------------------------
# concentration: bound checks, the CI gate
# ---------------------------------------------------------------------------


_CHECK_PARAM_KEYS = ("gamma", "n", "t", "c", "alpha", "d", "d1", "a",
                     "weight_y", "weight_x", "set_gamma")


def cmd_concentration(args) -> int:
    rng = _rng(args)
    if args.check:
        params = {k: getattr(args, k) for k in _CHECK_PARAM_KEYS
                  if getattr(args, k, None) is not None}
        try:
            checks = [run_named_check(args.check, params, rng, args.trials)]
        except (ValueError, KeyError) as exc:
            raise SystemExit(f"bad check request: {exc}")
    else:
        checks = default_sweep(rng, trials=args.trials)
    rows = [c.csv_row() for c in checks]
    # unify CSV columns across heterogeneous checks
    keys: list[str] = []
    for r in rows:
        for key in r:
            if key not in keys:
                keys.append(key)
    rows = [{k: r.get(k, "") for k in keys} for r in rows]
    emit(args, make_record("concentration", args, [c.to_json() for c in checks]), rows)
    failed = [c.name for c in checks if not c.verdict]
    if failed:
        print(f"FAILED verdicts: {failed}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# streaming: pass simulations and space/accuracy sweeps
# ---------------------------------------------------------------------------


def cmd_streaming(args) -> int:
    rng = _rng(args)
    if args.stream_file:
        try:
            with open(args.stream_file) as fh:
                stream = stream_from_csv(fh.read())
        except (OSError, ValueError) as exc:
            raise SystemExit(f"bad stream file: {exc}")
        payload = {"tokens": len(stream), "distinct": exact_f0(stream)}
        emit(args, make_record("streaming", args, payload))
        return 0
    if args.n is None or args.g is None:
        raise SystemExit("streaming needs --n and --g")
    promise = CubePromise(args.n, args.g)
    if args.k_min_grid:
        rows = accuracy_requirement_check(
            args.n, args.g, _grid(args.k_min_grid), args.count, rng, p=args.p
        )
        emit(args, make_record("streaming", args, rows), rows)
        return 0
    records = []
    ok = True
    for i in range(args.count):
        sub = rng.split(i)
        x, y = sample_promise(promise, sub)
        algo = ExactF0(args.n) if args.algo == "exact" else KmvF0(args.k_min)
        rec = simulate_passes(x, y, algo, args.p, sub.split(1), promise)
        records.append(rec.to_json())
        ok &= rec.correct is not False or args.algo != "exact"
    emit(args, make_record("streaming", args, records))
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="ghdlab",
        description="gap-Hamming communication laboratory: instance generation, "
                    "protocol evaluation, round elimination, concentration "
                    "bounds, streaming reductions",
    )
    top.add_argument("--version", action="version", version=f"ghdlab {__version__}")
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="sample labeled promise instance pairs")
    g.add_argument("--domain", choices=("cube", "sphere"), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--g", type=float, help="Hamming gap (cube)")
    g.add_argument("--gamma", type=float, help="inner-product gap (sphere)")
    g.add_argument("--count", type=int, default=10)
    add_common(g)
    g.set_defaults(func=cmd_gen)

    p = sub.add_parser("protocol", help="evaluate a protocol's error")
    p.add_argument("--protocol", choices=("trivial", "constant0", "sampling"),
                   default="trivial")
    p.add_argument("--protocol-file", help="JSON table protocol")
    p.add_argument("--n", type=int)
    p.add_argument("--g", type=float, help="promise gap for the distribution")
    p.add_argument("--gamma", type=float,
                   help="sampling gap: disagreement rate 1/2 -+ gamma")
    p.add_argument("--m", type=int, help="sampling protocol message size (odd)")
    p.add_argument("--m-grid", help="sweep m over start:stop:step")
    p.add_argument("--convention", choices=("sign", "promise"), default="sign")
    p.add_argument("--method", choices=("auto", "exhaustive", "monte-carlo"),
                   default="auto")
    add_common(p)
    p.set_defaults(func=cmd_protocol)

    r = sub.add_parser("roundelim", help="run a full elimination trajectory")
    r.add_argument("--protocol-file", help="JSON table protocol")
    r.add_argument("--demo", choices=("prefix", "first-bit"), default="prefix",
                   help="builtin protocol family when no file is given")
    r.add_argument("--n", type=int)
    r.add_argument("--k", type=int)
    r.add_argument("--c1", type=int, help="bits per round of the demo protocol")
    r.add_argument("--d1", type=float, help="override the snap radius formula")
    r.add_argument("--g", type=float, help="promise gap (with --convention promise)")
    r.add_argument("--delta", type=float, help=argparse.SUPPRESS)  # reserved
    r.add_argument("--convention", choices=("sign", "promise"), default="sign")
    r.add_argument("--max-exhaustive-n", type=int, default=13)
    add_common(r)
    r.set_defaults(func=cmd_roundelim)

    c = sub.add_parser("concentration", help="bound checks (exit 1 on any failure)")
    c.add_argument("--check", help="single named check; default: full sweep")
    c.add_argument("--n", type=int)
    c.add_argument("--gamma", type=float)
    c.add_argument("--set-gamma", dest="set_gamma", type=float)
    c.add_argument("--t", type=float)
    c.add_argument("--c", type=float)
    c.add_argument("--alpha", type=float)
    c.add_argument("--d", type=float)
    c.add_argument("--d1", type=float)
    c.add_argument("--a", type=float)
    c.add_argument("--weight-y", dest="weight_y", type=int)
    c.add_argument("--weight-x", dest="weight_x", type=int)
    add_common(c)
    c.set_defaults(func=cmd_concentration)

    s = sub.add_parser("streaming", help="multi-pass streaming reductions")
    s.add_argument("--n", type=int)
    s.add_argument("--g", type=float)
    s.add_argument("--p", type=int, default=1, help="number of passes")
    s.add_argument("--algo", choices=("exact", "kmv"), default="exact")
    s.add_argument("--k-min", type=int, default=64)
    s.add_argument("--k-min-grid", help="sweep k_min over start:stop:step")
    s.add_argument("--count", type=int, default=20, help="instance pairs")
    s.add_argument("--stream-file", help="parse a token CSV and report F0")
    add_common(s)
    s.set_defaults(func=cmd_streaming)
    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
