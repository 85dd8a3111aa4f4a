"""Command-line front end.

    committee-ba run --n 64 --t 21 --adversary splitworld --trials 200 --las-vegas --out r.csv
    committee-ba sweep --n-list 16,64 --adversary-list null,coinkiller --out s.csv
    committee-ba coin-test --n 100 --trials 100000
    committee-ba verify
    committee-ba curves --n 1024 --x-list 0,8,32,128

Every flag can also come from a flat JSON object passed with ``--config``;
command-line values win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from typing import List, Optional, Sequence

import numpy as np

from .analysis import curves_csv, summarize
from .common_coin import (
    CoinTrialSetup,
    estimate_coin_guarantee,
    exact_moment,
    moment_formula,
    pz_bound,
    tail_probability,
)
from .engine import INPUT_MODES, TrialConfig, TrialResult, run_batch
from .protocol import ProtocolParams, committee_count

log = logging.getLogger("committee_ba")

CSV_FIELDS = ["trial", "seed", "n", "t", "q", "adversary", "phases", "rounds", "agreement", "validity", "violations"]
COIN_FLOOR = 1 / 12


class UsageError(Exception):
    pass


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _shift(text: str):
    if text == "worst-case":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("shift must be 'worst-case' or an integer")


def _add_protocol_flags(p: argparse.ArgumentParser, sweep: bool = False):
    if sweep:
        p.add_argument("--n-list", type=_int_list, default=[16, 64, 256])
        p.add_argument("--t-list", type=_int_list, default=None,
                       help="default: floor((n-1)/3) for each n")
        p.add_argument("--adversary-list", default="null,crash,splitworld,coinkiller,antiassigned",
                       help="semicolon- or comma-separated list of name[:k=v,...]")
    else:
        p.add_argument("--n", type=int, required=False)
        p.add_argument("--t", type=int, required=False)
        p.add_argument("--adversary", default="null", help="name[:key=value,...]")
    p.add_argument("--alpha", type=float, default=18.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--log-base", type=float, default=2.0)
    p.add_argument("--finish-broadcast", choices=["phase", "round"], default="phase")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--las-vegas", action="store_true", default=False)
    p.add_argument("--max-phases", type=int, default=None)
    p.add_argument("--inputs", choices=INPUT_MODES, default="mixed")
    p.add_argument("--record-trace", action="store_true", default=False)
    p.add_argument("--trace-out", default=None, help="default: <out>.trace.jsonl")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="results file (default: stdout)")
    p.add_argument("--format", choices=["csv", "jsonl"], default="csv")


def build_parser() -> argparse.ArgumentParser:
    """The parser; ``parser.commands`` maps each subcommand to its subparser."""
    parser = argparse.ArgumentParser(prog="committee-ba", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", default=None, help="flat JSON file of flag values")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one batch at fixed (n, t)")
    _add_protocol_flags(run)

    sweep = sub.add_parser("sweep", help="n-list x t-list x adversary-list")
    _add_protocol_flags(sweep, sweep=True)

    coin = sub.add_parser("coin-test", help="Monte Carlo check of the common-coin floor")
    coin.add_argument("--n", type=int, default=100)
    coin.add_argument("--f", type=int, default=None, help="default: floor(sqrt(n)/2)")
    coin.add_argument("--shift", type=_shift, default="worst-case")
    coin.add_argument("--trials", type=int, default=100_000)
    coin.add_argument("--seed", type=int, default=0)

    verify = sub.add_parser("verify", help="brute-force moment and bound checks")
    verify.add_argument("--max-g", type=int, default=16)
    verify.add_argument("--n-list", type=_int_list, default=[16, 64, 100, 256])
    verify.add_argument("--trials", type=int, default=100_000)
    verify.add_argument("--seed", type=int, default=0)

    curves = sub.add_parser("curves", help="reference round-complexity curves as CSV")
    curves.add_argument("--n", type=int, required=True)
    curves.add_argument("--x-list", type=_int_list, default=None)
    curves.add_argument("--log-base", type=float, default=2.0)
    curves.add_argument("--out", default=None)
    parser.commands = {"run": run, "sweep": sweep, "coin-test": coin, "verify": verify, "curves": curves}
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    flat = isinstance(cfg, dict) and all(
        not isinstance(v, dict) and not (isinstance(v, list) and any(isinstance(x, (dict, list)) for x in v))
        for v in cfg.values()
    )
    if not flat:
        raise UsageError("config must be a flat JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def parse_args(argv: Optional[Sequence[str]]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = _load_config(args.config)
        subparser = parser.commands[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = set(cfg) - known - {"config", "verbose"}
        if unknown:
            raise UsageError(f"unknown config key(s): {sorted(unknown)}")
        for key in ("n_list", "t_list", "x_list"):
            if key in cfg:
                v = cfg[key]
                cfg[key] = [int(x) for x in v] if isinstance(v, list) else _int_list(v)
        subparser.set_defaults(**{k: v for k, v in cfg.items() if k in known})
        args = parser.parse_args(argv)
    return args


def _params(args, n: int, t: int) -> ProtocolParams:
    if n is None or t is None:
        raise UsageError("--n and --t are required")
    try:
        return ProtocolParams(
            n=n, t=t, alpha=args.alpha, gamma=args.gamma, log_base=args.log_base,
            las_vegas=args.las_vegas, finish_broadcast=args.finish_broadcast,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def _template(args, n: int, t: int, adversary: str) -> TrialConfig:
    params = _params(args, n, t)
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    try:
        return TrialConfig(
            params=params, adversary=adversary, seed=args.seed, max_phases=args.max_phases,
            record_trace=args.record_trace, inputs=args.inputs,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def result_row(r: TrialResult) -> dict:
    return {
        "trial": r.trial,
        "seed": r.seed,
        "n": r.n,
        "t": r.t,
        "q": r.q,
        "adversary": r.adversary,
        "phases": r.phases_used,
        "rounds": r.rounds_used,
        "agreement": int(r.agreement),
        "validity": int(r.validity_ok),
        "violations": ";".join(r.violations),
    }


def _effective_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    return json.loads(json.dumps(cfg, default=str))


def _open_out(path: Optional[str]):
    if path is None:
        return sys.stdout
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}")


def write_results(fh, results: Sequence[TrialResult], fmt: str, config: dict):
    if fmt == "csv":
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow(result_row(r))
    else:
        fh.write(json.dumps({"config": config}, sort_keys=True) + "\n")
        for r in results:
            row = result_row(r)
            row.update(completed=r.completed, c=r.c, messages=r.messages_sent,
                       violations=list(r.violations))
            fh.write(json.dumps(row) + "\n")


def write_trace(path: str, results: Sequence[TrialResult]):
    try:
        with open(path, "w") as fh:
            for r in results:
                for rec in r.trace or ():
                    fh.write(json.dumps(rec) + "\n")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}")


def _report(label: str, results: Sequence[TrialResult]):
    s = summarize(results)
    print(
        f"{label}: trials={s.trials} agreement={s.agreement_rate:.3f} "
        f"[{s.agreement_ci[0]:.3f},{s.agreement_ci[1]:.3f}] validity={s.validity_rate:.3f} "
        f"phases mean={s.mean_phases:.2f} median={s.median_phases:g} p95={s.p95_phases:g} "
        f"mean_q={s.mean_q:.2f} violations={s.violations}",
        file=sys.stderr,
    )
    return s


def _run_batches(args, templates) -> int:
    fh = _open_out(args.out)
    results: List[TrialResult] = []
    try:
        for label, template in templates:
            batch = run_batch(template, args.trials, workers=args.workers)
            _report(label, batch)
            results.extend(batch)
        write_results(fh, results, args.format, _effective_config(args))
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.record_trace:
        trace_path = args.trace_out or (args.out + ".trace.jsonl" if args.out else "trace.jsonl")
        write_trace(trace_path, results)
    bad = sum(1 for r in results if r.violations)
    if bad:
        log.error("%d trial(s) recorded invariant violations", bad)
        return 1
    return 0


def cmd_run(args) -> int:
    template = _template(args, args.n, args.t, args.adversary)
    layout = committee_count(template.params)
    log.info("c=%d s=%d whp=%s", layout.c, layout.s, template.params.whp)
    return _run_batches(args, [(f"n={args.n} t={args.t} {args.adversary}", template)])


def _split_adversaries(text: str) -> List[str]:
    # ';' separates strategies whenever parameters need commas
    sep = ";" if ";" in text else ","
    if sep == "," and ":" in text:
        raise UsageError("use ';' to separate adversaries that carry parameters")
    return [a.strip() for a in text.split(sep) if a.strip()]


def cmd_sweep(args) -> int:
    templates = []
    for n in args.n_list:
        ts = args.t_list if args.t_list else [(n - 1) // 3]
        for t in ts:
            for adv in _split_adversaries(args.adversary_list):
                templates.append((f"n={n} t={t} {adv}", _template(args, n, t, adv)))
    return _run_batches(args, templates)


def cmd_coin_test(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    f = math.isqrt(args.n) // 2 if args.f is None else args.f
    try:
        setup = CoinTrialSetup(n=args.n, g=args.n - f, f=f)
        rng = np.random.default_rng(args.seed)
        est = estimate_coin_guarantee(setup, args.shift, args.trials, rng)
    except ValueError as exc:
        raise UsageError(str(exc))
    ok = True
    print(f"n={setup.n} g={setup.g} f={setup.f} trials={est.trials} shift={args.shift}")
    for side, p in (("Pr(X > f)", est.p_above), ("Pr(X < -f)", est.p_below)):
        floor = COIN_FLOOR - 3 * est.sigma(p)
        good = p >= floor
        ok &= good
        print(f"{side} = {p:.4f}  floor 1/12-3sigma = {floor:.4f}  {'OK' if good else 'FAIL'}")
    print(f"empirical delta = {est.empirical_delta:.4f}  Pr(0 | agree) = {est.empirical_eps0:.4f}")
    if est.delta is not None:
        print(f"analytic delta >= {est.delta:.4f}  epsilon >= {est.epsilon:.4f}")
    return 0 if ok else 1


def cmd_verify(args) -> int:
    ok = True
    for g in range(1, args.max_g + 1):
        for power in (2, 4):
            got = exact_moment(g, power)
            want = moment_formula(g, power)
            good = got == want
            ok &= good
            print(f"E[X^{power}] g={g}: {got} == {want} {'OK' if good else 'FAIL'}")
    rng = np.random.default_rng(args.seed)
    for n in args.n_list:
        setup = CoinTrialSetup.sqrt_budget(n)
        bound = pz_bound(setup)
        p = tail_probability(setup, math.sqrt(n) / 2, args.trials, rng)
        slack = 3 * math.sqrt(p * (1 - p) / args.trials)
        good = bound <= p + slack
        ok &= good
        print(f"PZ n={n} g={setup.g}: bound {bound:.4f} <= Pr(X > sqrt(n)/2) {p:.4f} + {slack:.4f} "
              f"{'OK' if good else 'FAIL'}")
    return 0 if ok else 1


def cmd_curves(args) -> int:
    xs = args.x_list
    if xs is None:
        top = (args.n - 1) // 3
        xs = sorted({int(round(top * k / 16)) for k in range(17)})
    try:
        text = curves_csv(args.n, xs, args.log_base)
    except ValueError as exc:
        raise UsageError(str(exc))
    fh = _open_out(args.out)
    try:
        fh.write(text)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "coin-test": cmd_coin_test,
    "verify": cmd_verify,
    "curves": cmd_curves,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
