"""Command-line entry point.

Exit codes: 0 success, 2 acceptance failure, 1 error (with a JSON error
object on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import secrets
import sys

from . import experiments as ex
from .ancestry import DELTA, ancestor_table, find_renewals, trace_ancestry
from .errors import ConfigError, MTCPError, UnknownSubcommand
from .forward import TypedConfig, evolve_multitype, heaviside, interface_stats
from .harris import HarrisConstruction, sample_harris, snap_time

SUBCOMMANDS = ("sample", "evolve", "trace", "renewals", "experiment", "rwalk", "replay")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v)
    return out


def _window(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"window must look like lo,hi (got {text!r})") from None
    return lo, hi


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(63)
        print(f"seed: {args.seed}")
    return args.seed


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=ex._json_default)
        fh.write("\n")


def _sampling_flags(p):
    p.add_argument("--lambda", dest="lam", type=float, default=4.0)
    p.add_argument("--kernel", default="nearest", help='"nearest", "uniform:R" or a JSON weight map')
    p.add_argument("--window", type=_window, default=(-50, 50))
    p.add_argument("--horizon", type=float, default=20.0)
    p.add_argument("--harris", help="read the construction from a JSON file instead of sampling")


def _construction(args) -> HarrisConstruction:
    if getattr(args, "harris", None):
        with open(args.harris) as fh:
            return HarrisConstruction.from_json(json.load(fh))
    kern = ex.parse_kernel(_parse_value(args.kernel) if args.kernel.startswith("{") else args.kernel)
    return sample_harris(kern, args.lam, args.window, args.horizon, _seed(args))


def _initial(source: str, H) -> TypedConfig:
    if source == "heaviside":
        return heaviside(H.window)
    with open(source) as fh:
        return TypedConfig.from_json(json.load(fh))


def _out(args, name):
    os.makedirs(args.output_dir, exist_ok=True)
    return os.path.join(args.output_dir, name)


# ---------------------------------------------------------------------------
# subcommands


def cmd_sample(args) -> int:
    H = _construction(args)
    path = _out(args, "harris.json")
    with open(path, "w") as fh:
        fh.write(H.dumps())
    print(f"sampled {H.n_events} events on window {list(H.window)} up to t={H.horizon:g} -> {path}")
    return 0


def _evolve(H, args) -> dict:
    t = snap_time(args.t)
    c = evolve_multitype(H, _initial(args.evolve, H), t)
    s = interface_stats(c)
    return {
        "meta": H.to_json()["meta"],
        "t": t,
        "initial": args.evolve,
        "state": c.to_json(),
        "rightmost_1": s.r,
        "leftmost_2": s.l,
        "rho": s.rho,
        "boundary_contaminated": bool(c.boundary_contaminated),
    }


def cmd_evolve(args) -> int:
    H = _construction(args)
    res = _evolve(H, args)
    path = _out(args, "evolve.json")
    _write_json(path, res)
    print(f"t={res['t']:g}: rightmost 1 at {res['rightmost_1']}, leftmost 2 at {res['leftmost_2']}, rho={res['rho']} -> {path}")
    return 0


def _trace(H, args) -> tuple[dict, list]:
    t = snap_time(args.t)
    h = trace_ancestry(H, args.x, t)
    table = ancestor_table(H, t, args.N)
    rows = []
    for x in range(H.lo, H.hi + 1):
        for n, y in enumerate(table.ancestors(x), 1):
            rows.append((x, n, t, y, int(table.uncertain[x - H.lo])))
    res = {
        "meta": H.to_json()["meta"],
        "x": args.x,
        "t": t,
        "candidates": [None if c is DELTA else c for c in h.candidates] if not h.dead else [],
        "first_ancestor": None if h.first is DELTA else h.first,
        "boundary_contaminated": bool(h.boundary_contaminated),
    }
    return res, rows


def cmd_trace(args) -> int:
    H = _construction(args)
    res, rows = _trace(H, args)
    _write_json(_out(args, "trace.json"), res)
    with open(_out(args, "ancestors.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "n", "t", "ancestor", "uncertain"])
        w.writerows(rows)
    print(f"first ancestor of ({args.x}, {res['t']:g}): {res['first_ancestor']}; {len(rows)} table rows")
    return 0


def _renewals(H, args) -> list:
    return find_renewals(H, args.x, args.margin)


def cmd_renewals(args) -> int:
    H = _construction(args)
    recs = _renewals(H, args)
    with open(_out(args, "renewals.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "time", "site", "increment_space", "increment_time", "censored", "boundary_contaminated"])
        for r in recs:
            site = "DELTA" if r.site is DELTA else r.site
            w.writerow([r.index, repr(r.time), site, "" if r.increment_space is None else r.increment_space, repr(r.increment_time), int(r.censored), int(r.boundary_contaminated)])
    print(f"{len(recs) - 1} renewals of x={args.x} with margin {args.margin:g}")
    return 0


def _load_experiment(args, kind=None) -> ex.ExperimentConfig:
    base = {}
    if args.config:
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{args.config}: {e}") from None
    if kind:
        base.setdefault("kind", kind)
    base.update(_overrides(args.overrides))
    if args.seed is not None or "master_seed" not in base:
        base["master_seed"] = _seed(args)
    return ex.ExperimentConfig.from_json(base)


def _run_experiment(args, kind=None) -> int:
    cfg = _load_experiment(args, kind)
    rep = ex.run(cfg, args.jobs)
    csv_path, json_path = rep.write(args.output_dir, args.stem or cfg.kind)
    for c in rep.checks:
        tag = "PASS" if c["passed"] else "FAIL"
        kind_ = "" if c["acceptance"] else " (diagnostic)"
        print(f"{tag} {c['name']}{kind_}")
    print(f"replicas={cfg.replicas} contaminated={rep.discarded_contaminated} censored={rep.censored} runtime={rep.runtime:.1f}s")
    print(f"wrote {csv_path} and {json_path}")
    return 0 if rep.passed else 2


def cmd_experiment(args) -> int:
    if not args.config and not any(o.startswith("kind=") for o in args.overrides or ()):
        raise ConfigError("experiment needs --config or kind=...")
    return _run_experiment(args)


def cmd_rwalk(args) -> int:
    return _run_experiment(args, "rwalk_tail")


def cmd_replay(args) -> int:
    if not args.harris:
        raise ConfigError("replay needs --harris")
    H = _construction(args)
    done = False
    if args.evolve:
        if args.t is None:
            raise ConfigError("--evolve needs --t")
        _write_json(_out(args, "evolve.json"), _evolve(H, args))
        done = True
    if args.trace is not None:
        if args.t is None:
            raise ConfigError("--trace needs --t")
        args.x = args.trace
        res, rows = _trace(H, args)
        _write_json(_out(args, "trace.json"), res)
        with open(_out(args, "ancestors.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "n", "t", "ancestor", "uncertain"])
            w.writerows(rows)
        done = True
    if args.renewals is not None:
        args.x = args.renewals
        cmd_renewals(args)
        done = True
    if not done:
        raise ConfigError("replay needs --evolve, --trace or --renewals")
    print(f"replayed {args.harris}")
    return 0


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _glue_negative(argv: list) -> list:
    # "--window -20,20" would otherwise read -20,20 as an option
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a == "--window" and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"--window={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtcp", description="Two-type contact process simulator and verification lab.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output_dir", "--output-dir", dest="output_dir", default=".")
        return sp

    sp = common(sub.add_parser("sample", help="sample a Harris construction"))
    _sampling_flags(sp)
    sp.set_defaults(func=cmd_sample)

    sp = common(sub.add_parser("evolve", help="evolve a typed configuration"))
    _sampling_flags(sp)
    sp.add_argument("--evolve", "--initial", dest="evolve", default="heaviside")
    sp.add_argument("--t", type=float, required=True)
    sp.set_defaults(func=cmd_evolve)

    sp = common(sub.add_parser("trace", help="trace the ancestry of a site"))
    _sampling_flags(sp)
    sp.add_argument("--x", type=int, required=True)
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--N", type=int, default=3)
    sp.set_defaults(func=cmd_trace)

    sp = common(sub.add_parser("renewals", help="renewal points of a lineage"))
    _sampling_flags(sp)
    sp.add_argument("--x", type=int, default=0)
    sp.add_argument("--margin", type=float, default=30.0)
    sp.set_defaults(func=cmd_renewals)

    for name, func in (("experiment", cmd_experiment), ("rwalk", cmd_rwalk)):
        sp = common(sub.add_parser(name, help=f"run {'an experiment' if name == 'experiment' else 'the perturbed-walk suite'}"))
        sp.add_argument("--config")
        sp.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--stem")
        sp.add_argument("overrides", nargs="*", metavar="key=value")
        sp.set_defaults(func=func)

    sp = common(sub.add_parser("replay", help="rerun operations on a stored construction"))
    _sampling_flags(sp)
    sp.add_argument("--evolve", default=None)
    sp.add_argument("--trace", type=int, default=None)
    sp.add_argument("--renewals", type=int, default=None)
    sp.add_argument("--t", type=float)
    sp.add_argument("--N", type=int, default=3)
    sp.add_argument("--margin", type=float, default=30.0)
    sp.set_defaults(func=cmd_replay)
    return p


def _error(exc: Exception) -> int:
    code = getattr(exc, "code", type(exc).__name__)
    sys.stderr.write(json.dumps({"error": code, "message": str(exc)}) + "\n")
    return 1


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and not argv[0].startswith("-") and argv[0] not in SUBCOMMANDS:
        return _error(UnknownSubcommand(f"unknown subcommand {argv[0]!r}; expected one of {', '.join(SUBCOMMANDS)}"))
    parser = build_parser()
    try:
        args = parser.parse_args(_glue_negative(argv))
    except ConfigError as e:
        return _error(e)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    if not args.command:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except (MTCPError, ValueError, OSError) as e:
        return _error(e)


if __name__ == "__main__":
    sys.exit(main())
