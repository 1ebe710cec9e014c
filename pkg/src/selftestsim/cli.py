"""Command-line surface.

Subcommands: `selftest run` and `dimtest run` (Monte Carlo sessions),
`analyze` (white-box model analysis report), and `entcf-check` (exhaustive
function-family property suite). Exit codes: 0 success, 1 assertion or check
failure, 2 usage error. SELFTEST_SEED overrides --seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, entcf, harness
from .errors import SelfTestError
from .protocol import DimTestConfig, SelfTestConfig


def _entcf_params(args) -> entcf.EntcfParams:
    if args.backend == "ideal":
        return entcf.EntcfParams.ideal(args.w)
    return entcf.EntcfParams.toylwe(n=1, m=3, q=2**args.w, B=1)


def _add_run_flags(sub):
    sub.add_argument("--n", type=int, default=2)
    sub.add_argument("--w", type=int, default=4)
    sub.add_argument("--backend", choices=("ideal", "toylwe"), default="ideal")
    sub.add_argument("--prover", default="honest")
    sub.add_argument("--sessions", type=int, default=1000)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--transport", default="inproc")
    sub.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selftestsim")
    subs = parser.add_subparsers(dest="command", required=True)

    for kind in ("selftest", "dimtest"):
        sub = subs.add_parser(kind)
        actions = sub.add_subparsers(dest="action", required=True)
        run = actions.add_parser("run")
        _add_run_flags(run)

    an = subs.add_parser("analyze")
    an.add_argument("--n", type=int, default=1)
    an.add_argument("--w", type=int, default=2)
    an.add_argument("--model", default="honest")
    an.add_argument("--protocol", choices=("selftest", "dimtest"), default="selftest")
    an.add_argument("--seed", type=int, default=0)
    an.add_argument("--report", default=None)

    ek = subs.add_parser("entcf-check")
    ek.add_argument("--backend", choices=("ideal", "toylwe"), default="ideal")
    ek.add_argument("--w", type=int, default=3)
    ek.add_argument("--seed", type=int, default=0)
    ek.add_argument("--keys", type=int, default=8)
    return parser


def _run_command(args) -> int:
    seed = int(os.environ.get("SELFTEST_SEED", args.seed))
    params = _entcf_params(args)
    if args.command == "selftest":
        config = SelfTestConfig(N=args.n, entcf=params)
    else:
        config = DimTestConfig(N=args.n, entcf=params)
    stats, _ = harness.run_sessions(
        args.command,
        args.prover,
        config,
        sessions=args.sessions,
        seed=seed,
        transport_spec=args.transport,
        out_dir=args.out,
    )
    print(json.dumps(stats, sort_keys=True, indent=2))
    return 0


def _build_model(args, rng: np.random.Generator):
    params = entcf.EntcfParams.ideal(args.w)
    if args.protocol == "dimtest":
        config = DimTestConfig(N=args.n, entcf=params)
        if args.model == "classical":
            return analysis.build_classical_model(config, rng)
        return analysis.build_honest_model(config, "dimtest", rng)
    config = SelfTestConfig(N=args.n, entcf=params)
    if args.model == "honest":
        return analysis.build_honest_model(config, "selftest", rng)
    if args.model.startswith("bitflip="):
        honest = analysis.build_honest_model(config, "selftest", rng)
        return analysis.build_bitflip_model(honest, float(args.model.split("=", 1)[1]))
    if args.model == "wrongbasis":
        return analysis.build_wrongbasis_model(
            analysis.build_honest_model(config, "selftest", rng)
        )
    if args.model.startswith("random"):
        if "=" in args.model:
            rng = np.random.default_rng(int(args.model.split("=", 1)[1]))
        return analysis.build_random_model(config, rng)
    raise SelfTestError(f"unknown model {args.model!r}")


def _analyze_command(args) -> int:
    seed = int(os.environ.get("SELFTEST_SEED", args.seed))
    rng = np.random.default_rng(seed)
    model = _build_model(args, rng)
    report = analysis.analysis_report(model, rng)
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0 if report["all_ok"] else 1


def entcf_property_suite(backend: str, w: int, seed: int, n_keys: int) -> list[str]:
    """Exhaustive family checks; returns a list of failure descriptions."""
    failures = []
    rng = np.random.default_rng(seed)
    if backend == "ideal":
        params = entcf.EntcfParams.ideal(w)
    else:
        params = entcf.EntcfParams.toylwe(n=1, m=3, q=2**w, B=1)
    size_x = 2**params.w
    for trial in range(n_keys):
        f_key, f_trap = entcf.gen_keypair(entcf.FAMILY_F, params, rng)
        g_key, g_trap = entcf.gen_keypair(entcf.FAMILY_G, params, rng)
        for x in range(size_x):
            x1 = entcf.claw_partner(f_trap, x)
            if entcf.support(f_key, 0, x) != entcf.support(f_key, 1, x1):
                failures.append(f"trial {trial}: claw mismatch at x={x}")
            for key in (f_key, g_key):
                for b in (0, 1):
                    for y in entcf.support(key, b, x):
                        if entcf.chk((key,), (y,), (b,), (x,)) != 0:
                            failures.append(f"trial {trial}: chk rejects a support member")
                        if (b, x) not in entcf.preimages(key, y):
                            failures.append(f"trial {trial}: preimage scan misses (b, x)")
        f_ranges = [
            frozenset().union(*(entcf.support(f_key, b, x) for x in range(size_x)))
            for b in (0, 1)
        ]
        if f_ranges[0] != f_ranges[1]:
            failures.append(f"trial {trial}: F range mismatch")
        g0 = frozenset().union(*(entcf.support(g_key, 0, x) for x in range(size_x)))
        g1 = frozenset().union(*(entcf.support(g_key, 1, x) for x in range(size_x)))
        if g0 & g1:
            failures.append(f"trial {trial}: G ranges intersect")
        for x in range(size_x):
            for b in (0, 1):
                for y in entcf.support(g_key, b, x):
                    if entcf.decode_b(g_trap, y) != b:
                        failures.append(f"trial {trial}: decode_b inversion failure")
                    if entcf.decode_x(b, g_trap, y) != x:
                        failures.append(f"trial {trial}: decode_x inversion failure (G)")
            for y in entcf.support(f_key, 0, x):
                if entcf.decode_x(0, f_trap, y) != x:
                    failures.append(f"trial {trial}: decode_x inversion failure (F)")
                x1 = entcf.claw_partner(f_trap, x)
                if entcf.decode_x(1, f_trap, y) != x1:
                    failures.append(f"trial {trial}: claw-side decode mismatch")
                for d in range(1, size_x):
                    if entcf.decode_h(f_trap, y, d) != entcf.parity(d & (x ^ x1)):
                        failures.append(f"trial {trial}: h-hat equation mismatch")
                if entcf.decode_h(f_trap, y, 0) is not None:
                    failures.append(f"trial {trial}: h-hat defined at d=0")
    return failures


def _entcf_check_command(args) -> int:
    failures = entcf_property_suite(args.backend, args.w, args.seed, args.keys)
    if failures:
        for line in failures:
            print(line, file=sys.stderr)
        return 1
    print(f"entcf-check: OK ({args.backend}, w={args.w}, {args.keys} key pairs)")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if args.command in ("selftest", "dimtest"):
            return _run_command(args)
        if args.command == "analyze":
            return _analyze_command(args)
        return _entcf_check_command(args)
    except SelfTestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
