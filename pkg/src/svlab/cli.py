"""Command line batch runner.

Every command writes its table or document to ``--out`` (default stdout) and
a run manifest next to it. Options can also come from a JSON ``--config``
file whose keys are option names; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from datetime import datetime, timezone
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import (CertificateFailure, DecompositionError, NumericalError, ParameterError,
                     PreconditionError, SvlabError)

__all__ = ["main", "build_parser", "parse_grid", "parse_pairs", "config_hash"]

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ORACLE = 1
_NON_IDENTITY = {"out", "manifest", "jobs", "config", "command"}


def default_seed() -> int:
    raw = os.environ.get("SVLAB_SEED")
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ParameterError(f"SVLAB_SEED must be an integer, got {raw!r}") from None


def parse_grid(text: str) -> list[float]:
    """``a:b:c`` is ``c`` evenly spaced points from ``a`` to ``b``; a comma list is taken as is."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b, c = text.split(":")
            count = int(c)
            if count < 1:
                raise ValueError("point count must be positive")
            return [float(x) for x in np.linspace(float(a), float(b), count)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ParameterError(f"bad grid {text!r}: {exc}") from None


def parse_pairs(items) -> dict:
    """``["n=200", "eps=0.1"]`` to ``{"n": "200", "eps": "0.1"}``."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ParameterError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def identity(config: dict) -> dict:
    """Options that determine the output (paths and worker counts do not)."""
    return {k: v for k, v in sorted(config.items()) if k not in _NON_IDENTITY}


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(identity(config), sort_keys=True).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Parser


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # unset defaults are described in the help text itself
    def _get_help_string(self, action):
        if action.default in (None, False):
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    seed_help = "master seed (default: $SVLAB_SEED or 0)"
    fmt = _HelpFormatter
    p = argparse.ArgumentParser(prog="svlab", description=__doc__.splitlines()[0],
                                formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"svlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--manifest", help="manifest path (default: OUT.manifest.json; none for stdout)")
        sp.add_argument("--seed", type=int, default=None, help=seed_help)
        return sp

    profile_help = ("profile spec: band:n:eps[:fill], ones:n, zeros:n, identity:n, "
                    "block:s1,s2[:fill], halfcols:n, uppertri:n[:value], "
                    "random:n:density:seed, singular:n:k:m or file:path")
    atom_help = ("atom: rademacher, gaussian, gaussian-complex, disc, circle, two-point:p, "
                 "student-t:df or custom:xs:ps, with an optional @phase")
    shift_help = "shift: none, diag:Z, scalar:Z or diag-random:R0:K0:SEED"

    sp = common(sub.add_parser("check-profile", formatter_class=fmt,
                               help="broad connectivity or super-regularity report"))
    sp.add_argument("--band", nargs="+", metavar="KEY=VALUE",
                    help="search the band grid: n=N eps=E")
    sp.add_argument("--profile", help=profile_help)
    sp.add_argument("--kind", choices=["broad", "super"], default="broad", help="property to check")
    sp.add_argument("--delta", type=float, default=0.1, help="degree parameter")
    sp.add_argument("--nu", type=float, default=0.05, help="expansion parameter (broad)")
    sp.add_argument("--eps", type=float, default=0.1, help="block-size parameter (super)")
    sp.add_argument("--samples", type=int, default=10**4, help="random subsets per size")

    sp = common(sub.add_parser("decompose", formatter_class=fmt, help="profile decomposition JSON"))
    sp.add_argument("--profile", help=profile_help)
    sp.add_argument("--eps", type=float, default=0.05, help="regularity parameter")
    sp.add_argument("--delta", type=float, default=0.1, help="density parameter")
    sp.add_argument("--sigma-hat", type=float, default=0.3, help="profile threshold")
    sp.add_argument("--cap", type=int, default=64, help="maximum number of partition parts")
    sp.add_argument("--pad-free", action="store_true", default=False,
                    help="pad the removed free set to its maximal size")

    sp = common(sub.add_parser("certify", formatter_class=fmt, help="smallest singular value certificate"))
    sp.add_argument("--profile", help=profile_help)
    sp.add_argument("--atom", default="gaussian", help=atom_help)
    sp.add_argument("--shift", default="diag:1.0", help=shift_help)
    sp.add_argument("--method", choices=["pipeline", "triangular", "schur"], default="pipeline",
                    help="certificate construction")
    sp.add_argument("--decomposition", help="decomposition JSON (computed when omitted)")
    sp.add_argument("--split", type=int, default=None,
                    help="split point for --method schur (default: n // 2)")
    sp.add_argument("--eps", type=float, default=0.05, help="regularity parameter")
    sp.add_argument("--delta", type=float, default=0.1, help="density parameter")
    sp.add_argument("--sigma-hat", type=float, default=0.3, help="profile threshold")

    sp = common(sub.add_parser("tail", formatter_class=fmt, help="Monte Carlo tail table (CSV)"))
    sp.add_argument("--profile", help=profile_help)
    sp.add_argument("--atom", default="gaussian", help=atom_help)
    sp.add_argument("--shift", default="none", help=shift_help)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--tgrid", help="grid of t for {smin <= t/sqrt(n)}, as a:b:count or a,b,...")
    g.add_argument("--betagrid", help="grid of beta for {smin <= n^-beta}, as a:b:count or a,b,...")
    sp.add_argument("--trials", type=int, default=1000, help="number of trials (at least 100)")
    sp.add_argument("--K", type=float, default=None,
                    help="boundedness level ||M|| <= K sqrt(n) (default: no restriction)")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    sp = common(sub.add_parser("anticonc", formatter_class=fmt, help="concentration function table (CSV)"))
    sp.add_argument("--atom", default="rademacher", help=atom_help)
    sp.add_argument("--m", type=int, default=64, help="vector dimension")
    sp.add_argument("--vector", default="uniform", help="uniform, e1, or random")
    sp.add_argument("--rgrid", default="0.015625,0.03125,0.0625,0.125,0.25,0.5", help="radii")
    sp.add_argument("--samples", type=int, default=10**5, help="Monte Carlo samples")

    common(sub.add_parser("oracle-suite", formatter_class=fmt,
                          help="quick implementation-versus-oracle checks (JSON)"))
    return p


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)  # pragma: no cover


def _line_of(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return 1


def load_config(path: str, sp: argparse.ArgumentParser) -> dict:
    """Read a JSON config and map its keys to option destinations."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParameterError(f"{path}: cannot read config: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ParameterError(f"{path}:1: config must be a JSON object")
    dests = {a.dest: a for a in sp._actions if a.dest != "help"}
    out = {}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest in ("config", "command"):
            continue
        if dest not in dests:
            raise ParameterError(f"{path}:{_line_of(text, key)}: unknown option {key!r}")
        act = dests[dest]
        if act.type is not None and value is not None and not isinstance(value, list):
            try:
                value = act.type(value)
            except (TypeError, ValueError):
                raise ParameterError(f"{path}:{_line_of(text, key)}: bad value for {key!r}: "
                                     f"{value!r}") from None
        if act.choices is not None and value not in act.choices:
            raise ParameterError(f"{path}:{_line_of(text, key)}: {key!r} must be one of "
                                 f"{sorted(act.choices)}")
        out[dest] = value
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sp = _subparser(parser, args.command)
        sp.set_defaults(**load_config(args.config, sp))
        args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = default_seed()
    return args


# ---------------------------------------------------------------------------
# Output


def _versions() -> dict:
    return {"svlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())}


def _emit(text: str, args, config: dict, wall: float) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    mpath = args.manifest or (f"{args.out}.manifest.json" if args.out else None)
    if mpath:
        manifest = {"command": args.command, "config": config, "config_hash": config_hash(config),
                    "seed": args.seed, "versions": _versions(), "wall_time": round(wall, 6),
                    "timestamp": datetime.now(timezone.utc).isoformat(), "output": args.out}
        Path(mpath).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _json_doc(payload: dict, config: dict, seed) -> str:
    doc = {"command": config["command"], "config": identity(config), "config_hash": config_hash(config),
           "seed": seed, **payload}
    return json.dumps(doc, indent=2, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o).__name__)


def _csv_doc(body: str, config: dict) -> str:
    return "# config=" + json.dumps(identity(config), sort_keys=True) + "\n" + body


# ---------------------------------------------------------------------------
# Commands


def _need(args, name):
    if getattr(args, name) in (None, ""):
        raise ParameterError(f"--{name.replace('_', '-')} is required")
    return getattr(args, name)


def cmd_check_profile(args, config):
    from .profile import profile_from_spec
    from .profile_graph import (ProfileGraph, check_broad_connectivity, check_super_regularity,
                                verify_band_connectivity)

    if args.band:
        kv = parse_pairs(args.band)
        try:
            n, eps = int(kv["n"]), float(kv["eps"])
        except KeyError as exc:
            raise ParameterError(f"--band needs {exc.args[0]}=...") from None
        except ValueError as exc:
            raise ParameterError(f"--band: {exc}") from None
        delta, nu, rep = verify_band_connectivity(n, eps, report=True, n_random=args.samples,
                                                  seed=args.seed)
        payload = {"band": {"n": n, "eps": eps, "delta": delta, "nu": nu}, "report": rep.to_dict()}
        return _json_doc(payload, config, args.seed)
    g = ProfileGraph(profile_from_spec(_need(args, "profile")))
    if args.kind == "broad":
        rep = check_broad_connectivity(g, args.delta, args.nu, n_random=args.samples, seed=args.seed)
    else:
        rep = check_super_regularity(g, args.delta, args.eps, n_random=args.samples, seed=args.seed)
    return _json_doc({"report": rep.to_dict()}, config, args.seed)


def cmd_decompose(args, config):
    from .profile import profile_from_spec
    from .regularity import check_decomposition, decompose

    P = profile_from_spec(_need(args, "profile"))
    dec = decompose(P, args.eps, args.delta, args.sigma_hat, seed=args.seed, cap=args.cap,
                    pad_free=args.pad_free)
    return _json_doc({"decomposition": dec.to_dict(), "checks": check_decomposition(P, dec)},
                     config, args.seed)


def cmd_certify(args, config):
    from .certify import pipeline_certificate, schur_certificate, triangular_certificate
    from .ensemble import opnorm, sample, shift_from_spec, smin
    from .profile import atom_from_spec, profile_from_spec
    from .regularity import Decomposition, decompose

    P = profile_from_spec(_need(args, "profile"))
    ms = sample(P, atom_from_spec(args.atom), shift_from_spec(args.shift, P.n), args.seed)
    if args.method == "triangular":
        cert = triangular_certificate(ms)
    elif args.method == "schur":
        cert = schur_certificate(ms.matrix, args.split or P.n // 2)
    else:
        if args.decomposition:
            try:
                dec = Decomposition.from_json(Path(args.decomposition).read_text())
            except (OSError, ValueError, KeyError) as exc:
                raise ParameterError(f"{args.decomposition}: cannot read decomposition: {exc}") from None
        else:
            dec = decompose(P, args.eps, args.delta, args.sigma_hat, seed=args.seed)
        cert = pipeline_certificate(ms, dec)
    s, op = smin(ms), opnorm(ms)
    payload = {"certificate": cert.to_dict(), "svd_smin": s, "opnorm": op,
               "valid": bool(cert.bound <= s + 1e-9 * op), "consistent": cert.is_consistent()}
    return _json_doc(payload, config, args.seed)


def cmd_tail(args, config):
    from .ensemble import TailExperiment, shift_from_spec, tail_experiment
    from .profile import atom_from_spec, profile_from_spec

    P = profile_from_spec(_need(args, "profile"))
    if args.betagrid:
        grid, kind = parse_grid(args.betagrid), "beta"
    else:
        grid, kind = parse_grid(args.tgrid or "0.02:0.5:10"), "t"
    spec = TailExperiment(P, atom_from_spec(args.atom), grid, trials=args.trials, seed=args.seed,
                          shift=shift_from_spec(args.shift, P.n), grid_kind=kind, K=args.K,
                          jobs=args.jobs)
    res = tail_experiment(spec)
    return _csv_doc(res.to_csv({"grid_kind": kind, "config_hash": config_hash(config)}), config)


def cmd_anticonc(args, config):
    from .anticonc import concentration_curve, estimates_to_csv
    from .profile import atom_from_spec
    from .sphere import random_unit_vectors

    m = args.m
    if m < 1:
        raise ParameterError("--m must be positive")
    if args.vector == "uniform":
        v = np.ones(m) / np.sqrt(m)
    elif args.vector == "e1":
        v = np.eye(m)[0]
    elif args.vector == "random":
        v = random_unit_vectors(1, m, np.random.default_rng(args.seed))[0]
    else:
        raise ParameterError(f"unknown vector {args.vector!r}")
    est = concentration_curve(atom_from_spec(args.atom), v, parse_grid(args.rgrid),
                              n_samples=args.samples, seed=args.seed)
    for e in est:
        e.seed = args.seed
    return _csv_doc(estimates_to_csv(est, {"config_hash": config_hash(config)}), config)


def oracle_checks(seed: int = 0) -> list[dict]:
    """Small implementation-versus-oracle comparisons."""
    from .anticonc import concentration
    from .certify import schur_certificate, triangular_certificate
    from .ensemble import Shift, opnorm, sample, smin
    from .profile import gaussian_real, rademacher, zeros_profile
    from .sphere import build_net, comp_distance, covering_radius, random_unit_vectors, \
        restricted_invertibility

    rng = np.random.default_rng(seed)
    out = []

    def record(name, ok, **detail):
        out.append({"check": name, "passed": bool(ok), **detail})

    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(2, 9))
        v = random_unit_vectors(1, m, rng)[0]
        k = int(rng.integers(1, m + 1))
        brute = min(np.linalg.norm(np.delete(v, list(S))) for S in combinations(range(m), k))
        worst = max(worst, abs(brute - comp_distance(v, k)))
    record("comp_distance_vs_supports", worst <= 1e-12, max_error=worst)

    worst = -np.inf
    for _ in range(100):
        n = int(rng.integers(4, 17))
        M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        c = schur_certificate(M, int(rng.integers(1, n)))
        worst = max(worst, c.bound - smin(M) - 1e-9 * opnorm(M))
    record("schur_bound_below_svd", worst <= 0, max_excess=worst)

    ok = True
    for _ in range(10):
        n, m, beta = int(rng.integers(10, 40)), int(rng.integers(2, 8)), 0.5
        Q = np.linalg.qr(rng.standard_normal((n, m)))[0]
        I = restricted_invertibility(Q, beta)
        lam = np.linalg.eigvalsh(Q[I].T @ Q[I])[::-1]
        ok = ok and len(I) == int((1 - beta) ** 2 * m) and (len(I) == 0 or lam[len(I) - 1] >= beta ** 2 * m / n)
    record("restricted_invertibility_eigenvalue", ok)

    net = build_net(np.eye(3, 1, dtype=complex), 0.5)
    rad = covering_radius(net, 2000, seed)
    record("net_covering", rad <= 0.5 and net.cardinality <= net.bound(), radius=rad,
           cardinality=net.cardinality)

    p1 = concentration(rademacher(), [1.0], 0.5).p_hat
    p2 = concentration(rademacher(), np.ones(2) / np.sqrt(2), 0.5).p_hat
    record("concentration_enumeration", abs(p1 - 0.5) < 1e-12 and abs(p2 - 0.5) < 1e-12, values=[p1, p2])

    M = rng.standard_normal((30, 30))
    s = smin(M)
    record("smin_inverse_norm", abs(s * np.linalg.norm(np.linalg.inv(M), 2) - 1) <= 1e-8)

    z = np.linspace(1, 2, 16)
    c = triangular_certificate(sample(zeros_profile(16), gaussian_real(), Shift("diag", z), seed))
    record("triangular_zero_profile_exact", abs(c.bound - 4.0) <= 1e-12, bound=c.bound)
    return out


def cmd_oracle_suite(args, config):
    checks = oracle_checks(args.seed)
    payload = {"checks": checks, "passed": all(c["passed"] for c in checks)}
    return _json_doc(payload, config, args.seed)


COMMANDS = {"check-profile": cmd_check_profile, "decompose": cmd_decompose, "certify": cmd_certify,
            "tail": cmd_tail, "anticonc": cmd_anticonc, "oracle-suite": cmd_oracle_suite}


def _fail(kind: str, exc: Exception, code: int) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    for attr in ("block", "value", "prop"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(payload, default=str) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ParameterError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    config = _config(args)
    t0 = time.perf_counter()
    try:
        text = COMMANDS[args.command](args, config)
    except (ParameterError, PreconditionError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (NumericalError, CertificateFailure, DecompositionError, SvlabError) as exc:
        return _fail("numerical", exc, EXIT_NUMERIC)
    _emit(text, args, config, time.perf_counter() - t0)
    if args.command == "oracle-suite" and not json.loads(text)["passed"]:
        return EXIT_ORACLE
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
