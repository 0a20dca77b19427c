"""Command-line front end: run, estimate, sweep, bisect, analytic.

Exit codes: 0 ok, 2 invalid input, 3 run anomaly (event cap), 4 invalid
bisection bracket.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

from . import analytic
from .core import ModelId, RunOptions, SimParams, StopRule, derive_trial_rng
from .experiments import (
    BracketInvalid,
    RunAnomaly,
    UndecidableProbe,
    bisect_critical,
    run_trial,
    sweep,
)

EXIT_OK, EXIT_INVALID, EXIT_ANOMALY, EXIT_BRACKET = 0, 2, 3, 4

HEADER = ["model", "dim", "lambda", "r", "trials", "survivors", "estimate",
          "ci_low", "ci_high", "seed", "wall_time_s"]
SEED_ENV = "PATHOGEN_SEED"
_FLAGS = {"series", "genealogy", "timing"}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parsing helpers


def parse_grid(text: str) -> list:
    """``a,b,c`` or ``lo:hi:step`` (lo included, hi included within 1e-12)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"range must be lo:hi:step, got {text!r}")
        lo, hi, step = (float(p) for p in parts)
        if not (step > 0) or not math.isfinite(step):
            raise UsageError(f"range step must be positive, got {step}")
        if hi < lo:
            raise UsageError(f"range end {hi} is below its start {lo}")
        n = int(math.floor((hi - lo) / step + 1e-9))
        vals = [round(lo + k * step, 12) for k in range(n + 1)]
        nxt = lo + (n + 1) * step
        if abs(nxt - hi) <= 1e-12:
            vals.append(hi)
        return vals
    try:
        vals = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None
    if not vals:
        raise UsageError("empty value list")
    return vals


def fmt_float(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".9g")


def fmt_input(x: float) -> str:
    """9 significant digits, widened when needed to round-trip the parsed value."""
    s = fmt_float(x)
    return s if float(s) == x else repr(float(x))


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


_EXACT_KEYS = {"lambda", "r", "fixed_value"}


def _clean(o, exact=False):
    """JSON-ready copy: 9 significant digits except echoed inputs, inf as a string."""
    if isinstance(o, float):
        if math.isinf(o):
            return "inf" if o > 0 else "-inf"
        if math.isnan(o):
            return None
        return o if exact else float(format(o, ".9g"))
    if isinstance(o, dict):
        return {k: _clean(v, k in _EXACT_KEYS) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), default=_json_default, separators=(",", ":"), sort_keys=False) + "\n"


def read_config(path: str) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment. Keys are flag names."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.lstrip("-").replace("-", "_")
            if key == "lambda":
                key = "lam"
            if key in _FLAGS:
                low = val.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise UsageError(f"{path}:{n}: {key} expects a boolean")
                val = low in ("true", "1", "yes")
            out[key] = val
    return out


def write_out(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# parser


def _common(p, grid=False):
    p.add_argument("--config", help="key = value file; explicit flags win")
    p.add_argument("--model", required=False, help="m1, m2, m3, s1, s2 or s3")
    if grid:
        p.add_argument("--lambda", dest="lam", help="value, list a,b,c or range lo:hi:step")
        p.add_argument("--r", help="value, list a,b,c or range lo:hi:step")
    else:
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--r", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--max-pop", dest="max_pop", type=int, default=10_000)
    p.add_argument("--max-time", dest="max_time", type=float, default=1000.0)
    p.add_argument("--max-events", dest="max_events", type=int, default=10**8)
    p.add_argument("--seed", type=int, help=f"master seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--out-format", dest="out_format", choices=("csv", "json"))
    p.add_argument("--out-path", dest="out_path")


def _batch(p):
    p.add_argument("--trials", type=int)
    p.add_argument("--confidence", type=float, default=0.99)
    p.add_argument("--parallelism", type=int, default=os.cpu_count() or 1)
    p.add_argument("--timing", action="store_true",
                   help="report wall time (otherwise 0, keeping output byte-reproducible)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pathogen", description="Pathogen and immune-response simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    ap.commands = sub.choices

    p = sub.add_parser("run", help="simulate one trajectory")
    _common(p)
    p.add_argument("--series", action="store_true")
    p.add_argument("--genealogy", action="store_true")
    p.add_argument("--stride", type=float, default=0.5)

    p = sub.add_parser("estimate", help="survival probability of one parameter point")
    _common(p)
    _batch(p)

    p = sub.add_parser("sweep", help="survival over a (lambda, r) grid")
    _common(p, grid=True)
    _batch(p)

    p = sub.add_parser("bisect", help="bracket a critical lambda or r")
    _common(p)
    _batch(p)
    p.add_argument("--axis", choices=("lambda", "r"))
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--resolution", type=float, default=0.05)
    p.add_argument("--threshold", type=float, default=0.01)

    p = sub.add_parser("analytic", help="closed forms for m1, m2, m3")
    p.add_argument("--config")
    p.add_argument("--model")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--n", type=int, default=1, help="number of live types for the m1 bound")
    p.add_argument("--out-path", dest="out_path")
    return ap


def parse(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        # re-parse with the file as defaults so that explicit flags win
        cmd_parser = ap.commands[args.command]
        conf = read_config(args.config)
        known = {a.dest for a in cmd_parser._actions}
        unknown = set(conf) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cmd_parser.set_defaults(**conf)
        args = ap.parse_args(argv)
    return args


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + ("lambda" if n == "lam" else n.replace("_", "-")) for n in missing)
        raise UsageError(f"missing required option(s): {flags}")


def _seed(args) -> int:
    if args.seed is not None:
        seed = args.seed
    else:
        env = os.environ.get(SEED_ENV)
        try:
            seed = int(env) if env not in (None, "") else 0
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if seed < 0:
        raise UsageError(f"seed must be nonnegative, got {seed}")
    return seed


def _params(args, lam, r) -> SimParams:
    try:
        model = ModelId.parse(args.model)
        stop = StopRule(args.max_pop, args.max_time, args.max_events)
        return SimParams(model, lam, r, args.dim, stop)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _batch_checks(args):
    if args.trials is not None and args.trials < 1:
        raise UsageError(f"--trials must be positive, got {args.trials}")
    if not (0 < args.confidence < 1):
        raise UsageError(f"--confidence must lie in (0, 1), got {args.confidence}")
    if args.parallelism < 1:
        raise UsageError(f"--parallelism must be positive, got {args.parallelism}")


# ---------------------------------------------------------------------------
# tabular output


def _row(est, seed, timing):
    p = est.params
    return {
        "model": p.model.value,
        "dim": "" if p.dim is None else str(p.dim),
        "lambda": fmt_input(p.lam),
        "r": fmt_input(p.r),
        "trials": str(est.trials),
        "survivors": str(est.survivors),
        "estimate": fmt_float(est.estimate),
        "ci_low": fmt_float(est.ci_low),
        "ci_high": fmt_float(est.ci_high),
        "seed": str(seed),
        "wall_time_s": fmt_float(est.wall_time) if timing else "0",
    }


def _json_row(est, seed, timing):
    p = est.params
    out = {
        "model": p.model.value, "dim": p.dim, "lambda": p.lam, "r": p.r,
        "trials": est.trials, "survivors": est.survivors, "estimate": est.estimate,
        "ci_low": est.ci_low, "ci_high": est.ci_high, "seed": seed,
        "wall_time_s": est.wall_time if timing else 0,
        "confidence": est.confidence, "event_caps": est.event_caps,
    }
    if est.anomaly:
        out["anomaly"] = est.anomaly
    return out


def render_table(estimates, seed, timing, fmt, extra=None) -> str:
    if fmt == "json":
        obj = {"rows": [_json_row(e, seed, timing) for e in estimates]}
        if extra:
            obj.update(extra)
        return dump_json(obj)
    header = list(HEADER)
    flagged = any(e.anomaly for e in estimates)
    if flagged:
        header.append("anomaly")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for e in estimates:
        row = _row(e, seed, timing)
        if flagged:
            row["anomaly"] = e.anomaly or ""
        w.writerow([row[k] for k in header])
    if extra and "bracket_lo" in extra:
        w.writerow(["bracket_lo", "bracket_hi"])
        w.writerow([fmt_float(extra["bracket_lo"]), fmt_float(extra["bracket_hi"])])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    _need(args, "model", "lam", "r")
    params = _params(args, args.lam, args.r)
    if not (args.stride > 0):
        raise UsageError(f"--stride must be positive, got {args.stride}")
    seed = _seed(args)
    opts = RunOptions(series=args.series, stride=args.stride, genealogy=args.genealogy)
    out = run_trial(params, derive_trial_rng(seed, 0), opts)
    if args.out_format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["verdict", "reason", "time", "final_population", "final_type_count", "events"])
        w.writerow([out.verdict.value, "" if out.reason is None else out.reason.value,
                    fmt_float(out.time), out.final_population, out.final_type_count, out.events])
        text = buf.getvalue()
    else:
        body = {"model": params.model.value, "dim": params.dim, "lambda": params.lam,
                "r": params.r, "seed": seed}
        body.update(out.to_dict())
        text = dump_json(body)
    write_out(text, args.out_path)
    return EXIT_ANOMALY if out.event_cap_hit else EXIT_OK


def cmd_sweep(args, lams, rs) -> int:
    _batch_checks(args)
    seed = _seed(args)
    base = _params(args, lams[0], rs[0])
    for lam in lams:
        for r in rs:
            _params(args, lam, r)
    res = sweep(base, lams, rs, args.trials, seed, args.parallelism, args.confidence)
    text = render_table(res.rows, seed, args.timing, args.out_format or "csv")
    write_out(text, args.out_path)
    return EXIT_ANOMALY if any(e.anomaly for e in res.rows) else EXIT_OK


def cmd_estimate(args) -> int:
    _need(args, "model", "lam", "r")
    return cmd_sweep(args, [args.lam], [args.r])


def cmd_sweep_grid(args) -> int:
    _need(args, "model", "lam", "r")
    return cmd_sweep(args, parse_grid(args.lam), parse_grid(args.r))


def cmd_bisect(args) -> int:
    _need(args, "model", "axis", "lo", "hi")
    _need(args, "r" if args.axis == "lambda" else "lam")
    _batch_checks(args)
    if not (args.resolution > 0):
        raise UsageError(f"--resolution must be positive, got {args.resolution}")
    if not (args.lo < args.hi):
        raise UsageError(f"need --lo < --hi, got {args.lo}, {args.hi}")
    seed = _seed(args)
    lam = args.lo if args.axis == "lambda" else args.lam
    r = args.lo if args.axis == "r" else args.r
    template = _params(args, lam, r)
    key = "lam" if args.axis == "lambda" else "r"
    for x in (args.lo, args.hi):
        _params(args, *((x, r) if key == "lam" else (lam, x)))
    res = bisect_critical(template, args.axis, args.lo, args.hi, args.resolution, args.trials,
                          seed, args.parallelism, args.confidence, args.threshold)
    extra = {"axis": res.axis, "fixed_value": res.fixed_value,
             "decision_threshold": res.decision_threshold,
             "bracket_lo": res.lo, "bracket_hi": res.hi}
    text = render_table([p.estimate for p in res.probes], seed, args.timing,
                        args.out_format or "csv", extra)
    write_out(text, args.out_path)
    return EXIT_OK


def cmd_analytic(args) -> int:
    _need(args, "model", "lam", "r")
    try:
        model = ModelId.parse(args.model)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    lam, r = args.lam, args.r
    try:
        if model is ModelId.M3:
            v = analytic.model3_phase(lam, r)
            q = analytic.gw_extinction(analytic.model3_pmf(lam, r))
            body = {"survives": v.survives, "survival_probability": 1.0 - q,
                    "offspring_mean": r * lam}
        elif model is ModelId.M2:
            v = analytic.model2_phase(lam, r)
            body = {"survives": v.survives, "survival_probability": v.survival_probability,
                    "mean_offspring": analytic.model2_mean_offspring(lam, r)}
        elif model is ModelId.M1:
            if args.n < 1:
                raise UsageError(f"--n must be positive, got {args.n}")
            bound = analytic.model1_chain_bound(lam, r, args.n)
            body = {"survives": True, "n": args.n, "chain_bound": bound,
                    "note": "lower bound (2p-1)/p on survival once n types are alive, "
                            "p = n*lambda*r/(1 + n*lambda*r); positive when n*lambda*r > 1"}
        else:
            raise UsageError(f"no closed forms for spatial model {model.value}")
    except UsageError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    body = {"model": model.value, "lambda": lam, "r": r, **body}
    write_out(dump_json(body), args.out_path)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "estimate": cmd_estimate, "sweep": cmd_sweep_grid,
            "bisect": cmd_bisect, "analytic": cmd_analytic}


def main(argv=None) -> int:
    try:
        args = parse(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BracketInvalid as exc:
        print(f"error: bracket invalid: {exc}", file=sys.stderr)
        return EXIT_BRACKET
    except (RunAnomaly, UndecidableProbe) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANOMALY
    except OverflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANOMALY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
