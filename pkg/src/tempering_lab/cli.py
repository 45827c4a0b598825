"""Batch driver: every verification as a subcommand with JSON/CSV output.

Exit codes: 0 success, 1 an inequality check ran and failed, 2 invalid
input, 3 a state-space or iteration budget was exceeded.  All reports are
plain dicts so library calls and command output coincide byte for byte.

Subcommands: ``gap``, ``verify-lower``, ``verify-upper``, ``paths``,
``instance export``, ``simulate``, ``f-oracle``.  The environment variable
``TEMPERING_LAB_THREADS`` caps BLAS parallelism (applied at package import,
see the package root).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, ReversibilityError
from .kernels import (
    ProductSpace,
    aux_chain_P1,
    aux_chain_P2,
    default_level_kernels,
    metropolis_level_kernel,
    pt_kernel,
    product_update_T,
    project,
    projected_update_chain,
    restrict,
    swap_kernel_Q,
    uniform_proposal,
    StochasticMatrix,
)
from .measure import (
    DEFAULT_STATE_BUDGET,
    AssignmentSpace,
    TemperedFamily,
    load_family,
    random_family,
)
from .paths import canonical_paths, congestion, k_star, level0_path
from .hardness import (
    build_hard_instance,
    certificate,
    instance_to_json,
    min_divergence_f,
    constrained_projected_chain,
)
from .sampler import (
    run_parallel_tempering,
    write_trace_csv,
    write_trace_summary,
)
from .spectral import spectral_gap
from .measure import ProductAssignment

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_BUDGET = 3


@dataclass
class RunConfig:
    """Validated run parameters shared by the subcommands."""

    command: str
    input: str | None = None
    L: int | None = None
    m: int | None = None
    i: int | None = None
    k: int | None = None
    assignment: str | None = None
    kernel: str = "pt"
    hard_L: int | None = None
    N: int = 10_000
    seed: int = 0
    budget_states: int = DEFAULT_STATE_BUDGET
    tol: float = 1e-8
    fmt: str = "json"
    out: str | None = None

    def __post_init__(self):
        if self.budget_states <= 0:
            raise ValueError("state budget must be positive")
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.fmt not in ("json", "csv"):
            raise ValueError(f"unknown format {self.fmt!r}")


def _family_from_config(cfg: RunConfig) -> TemperedFamily:
    if cfg.input is not None:
        return load_family(cfg.input)
    if cfg.m is None or cfg.L is None:
        raise ValueError("either --input or both --m and --L are required")
    return random_family(cfg.m, cfg.L, seed=cfg.seed)


def assignment_labels(family: TemperedFamily) -> np.ndarray:
    """Assignment-space index of every product state's mode projection."""
    pspace = ProductSpace(family.n_atoms, family.L + 1)
    modes = family.target.partition_labels
    states = np.arange(pspace.size)
    labels = np.zeros(pspace.size, dtype=np.int64)
    for i in range(family.L + 1):
        digit = pspace.digit(states, i)
        labels = labels * family.m + (modes[digit] - 1)
    return labels


def infer_stationary(matrix: np.ndarray) -> np.ndarray:
    """Left Perron vector of a row-stochastic matrix, normalized."""
    vals, vecs = np.linalg.eig(matrix.T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, idx])
    pi = np.abs(pi)
    return pi / pi.sum()


def gap_report(cfg: RunConfig) -> dict:
    """Spectral-gap report for a fixture kernel, a family kernel, or the
    constrained hard-instance chain."""
    if cfg.hard_L is not None:
        if cfg.hard_L < 1:
            raise ValueError("--hard-L must be >= 1")
        chain = constrained_projected_chain(build_hard_instance(cfg.hard_L))
        name = f"hard-constrained(L={cfg.hard_L})"
    elif cfg.input is not None:
        with open(cfg.input, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if "matrix" in data:
            matrix = np.asarray(data["matrix"], dtype=float)
            stationary = (
                np.asarray(data["stationary"], dtype=float)
                if "stationary" in data
                else infer_stationary(matrix)
            )
            chain = StochasticMatrix(matrix, stationary, require_reversible=False)
            name = "fixture"
        elif "atoms" in data:
            chain = _family_kernel(cfg, load_family(cfg.input))
            name = cfg.kernel
        else:
            raise ValueError("input JSON needs either 'matrix' or 'atoms'")
    else:
        raise ValueError("gap needs --input or --hard-L")
    report = spectral_gap(chain, tol=cfg.tol)
    out = report.to_dict()
    out["kernel"] = name
    out["n_states"] = chain.n_states
    return out


def _family_kernel(cfg: RunConfig, family: TemperedFamily) -> StochasticMatrix:
    name = cfg.kernel
    if name.startswith("level:"):
        i = int(name.split(":", 1)[1])
        if not 0 <= i <= family.L:
            raise ValueError(f"level {i} out of range 0..{family.L}")
        return metropolis_level_kernel(family.level(i), uniform_proposal(family.n_atoms))
    if name in ("T", "Q", "pt", "pbar"):
        kernels = default_level_kernels(family)
        T = product_update_T(family, kernels, cfg.budget_states)
        if name == "T":
            return T
        Q = swap_kernel_Q(family, cfg.budget_states)
        if name == "Q":
            return Q
        P = pt_kernel(T, Q)
        if name == "pt":
            return P
        return project(P, assignment_labels(family))
    if name == "p1":
        return aux_chain_P1(family, cfg.budget_states)
    if name == "p2":
        return aux_chain_P2(family, cfg.budget_states)
    raise ValueError(f"unknown kernel selector {name!r}")


def verify_lower_report(
    family: TemperedFamily,
    budget: int = DEFAULT_STATE_BUDGET,
    tol: float = 1e-8,
) -> dict:
    """The comparison-chain pipeline with every inequality it rests on.

    Builds the product-space kernels, their assignment projection, the two
    comparison chains, the canonical-path congestion, and checks: the
    comparison bound ``Gap(P2) <= c * Gap(P1)``, the projection/restriction
    sandwich, the per-block restriction bound, and the refresh
    decomposition (the latter using the hottest level's projected update
    chain; all levels are reported).
    """
    level_kernels = default_level_kernels(family)
    T = product_update_T(family, level_kernels, budget)
    Q = swap_kernel_Q(family, budget)
    Ppt = pt_kernel(T, Q)
    labels = assignment_labels(family)
    Pbar = project(Ppt, labels)
    P1 = aux_chain_P1(family, budget)
    P2 = aux_chain_P2(family, budget)

    cong = congestion(P1, P2, canonical_paths(family, budget))
    gap_P1 = spectral_gap(P1).gap
    gap_P2 = spectral_gap(P2).gap
    gap_Ppt = spectral_gap(Ppt).gap
    gap_Pbar = spectral_gap(Pbar).gap

    restriction_gaps = []
    for lam_idx in range(AssignmentSpace(family.m, family.L + 1).size):
        block = np.nonzero(labels == lam_idx)[0]
        restriction_gaps.append(spectral_gap(restrict(Ppt, block)).gap)
    level_restriction_gaps = [
        spectral_gap(restrict(level_kernels[i], family.target.atoms_in_mode(k))).gap
        for i in range(family.L + 1)
        for k in range(1, family.m + 1)
    ]
    tbar_gaps = [
        spectral_gap(projected_update_chain(family, level_kernels[i], i)).gap
        for i in range(family.L + 1)
    ]

    min_restr = min(restriction_gaps)
    min_level_restr = min(level_restriction_gaps)
    checks = {
        "comparison": bool(gap_P2 <= cong.c * gap_P1 + tol),
        "eq14_projection_restriction": bool(gap_Ppt >= 0.5 * gap_Pbar * min_restr - tol),
        "eq15_block_restriction": bool(
            all(g >= min_level_restr / (8.0 * (family.L + 1)) - tol for g in restriction_gaps)
        ),
        "eq17_refresh_decomposition": bool(gap_Pbar >= 0.25 * gap_P1 * tbar_gaps[0] - tol),
    }
    return {
        "m": family.m,
        "L": family.L,
        "n_atoms": family.n_atoms,
        "congestion_c": cong.c,
        "gap_P1": gap_P1,
        "gap_P2": gap_P2,
        "gap_Ppt": gap_Ppt,
        "gap_Ppt_projected": gap_Pbar,
        "min_restriction_gap": min_restr,
        "min_level_restriction_gap": min_level_restr,
        "projected_update_gaps": tbar_gaps,
        "checks": checks,
        "all_ok": all(checks.values()),
    }


def verify_upper_report(cfg: RunConfig) -> dict:
    if cfg.L is None or cfg.L < 1:
        raise ValueError("--L >= 1 is required")
    inst = build_hard_instance(cfg.L)
    report = certificate(inst)
    out = report.to_dict()
    from .hardness import verify_bottleneck_bound, verify_mode_mass_bounds

    out["mode_mass_bounds_ok"] = verify_mode_mass_bounds(inst).ok
    out["bottleneck_ok"] = verify_bottleneck_bound(inst).ok
    out["all_ok"] = out["all_ok"] and out["mode_mass_bounds_ok"] and out["bottleneck_ok"]
    return out


def f_oracle_report(L_max: int) -> dict:
    if L_max < 1:
        raise ValueError("--L >= 1 is required")
    values = {L: min_divergence_f(L) for L in range(1, L_max + 1)}
    floor_ok = all(f >= (L.bit_length() - 1) for L, f in values.items())
    vals = list(values.values())
    monotone_ok = all(a <= b for a, b in zip(vals, vals[1:]))
    return {
        "f": {str(L): f for L, f in values.items()},
        "floor_log2_ok": floor_ok,
        "monotone_ok": monotone_ok,
        "all_ok": floor_ok and monotone_ok,
    }


def paths_rows(cfg: RunConfig) -> list:
    """Move list of one canonical path as CSV-ready rows."""
    family = _family_from_config(cfg)
    if cfg.i is None or cfg.k is None:
        raise ValueError("--i and --k are required")
    if cfg.assignment is not None:
        modes = tuple(int(x) for x in cfg.assignment.split(","))
    else:
        modes = tuple([1] * (family.L + 1))
    lam = ProductAssignment(modes, family.m)
    if lam.L != family.L:
        raise ValueError(f"assignment must cover {family.L + 1} levels")
    seq = level0_path(lam, cfg.i, cfg.k, k_star(family))
    rows = [["step", "kind", "arg", "state"]]
    states = list(seq.iter_states())
    rows.append([0, "start", "", ",".join(map(str, states[0]))])
    from .paths import AdjSwap

    for step, (move, state) in enumerate(zip(seq.moves, states[1:]), start=1):
        kind = "swap" if isinstance(move, AdjSwap) else "set0"
        arg = move.i if isinstance(move, AdjSwap) else move.k
        rows.append([step, kind, arg, ",".join(map(str, state))])
    return rows


def _write_payload(payload, cfg: RunConfig) -> None:
    if isinstance(payload, list):  # CSV rows
        target = open(cfg.out, "w", newline="", encoding="utf-8") if cfg.out else sys.stdout
        try:
            csv.writer(target).writerows(payload)
        finally:
            if cfg.out:
                target.close()
        return
    if cfg.fmt == "csv":
        rows = [["key", "value"]] + [
            [key, json.dumps(value)] for key, value in _flatten(payload)
        ]
        _write_payload(rows, cfg)
        return
    text = json.dumps(payload, indent=2)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _flatten(payload: dict, prefix: str = ""):
    for key, value in payload.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from _flatten(value, name + ".")
        else:
            yield name, value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempering-lab",
        description="verification commands for tempering spectral-gap bounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, input_arg=True):
        if input_arg:
            p.add_argument("--input", help="input JSON path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--budget-states", type=int, default=DEFAULT_STATE_BUDGET)
        p.add_argument("--tol", type=float, default=1e-8)
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", help="output path (default stdout)")

    p = sub.add_parser("gap", help="spectral gap of a kernel")
    common(p)
    p.add_argument("--kernel", default="pt", help="T|Q|pt|pbar|p1|p2|level:<i>")
    p.add_argument("--hard-L", type=int, dest="hard_L")

    p = sub.add_parser("verify-lower", help="comparison-chain pipeline checks")
    common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--L", type=int)

    p = sub.add_parser("verify-upper", help="hard-instance certificate")
    common(p, input_arg=False)
    p.add_argument("--L", type=int, required=True)

    p = sub.add_parser("paths", help="export one canonical path as CSV")
    common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--i", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--assignment", help="comma-separated start assignment")

    p = sub.add_parser("instance", help="hard-instance utilities")
    inst_sub = p.add_subparsers(dest="instance_command", required=True)
    pe = inst_sub.add_parser("export", help="exact mode-mass table as JSON")
    common(pe, input_arg=False)
    pe.add_argument("--L", type=int, required=True)

    p = sub.add_parser("simulate", help="run the sampler, write trace + summary")
    common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--N", type=int, default=10_000)

    p = sub.add_parser("f-oracle", help="minimax displacement oracle table")
    common(p, input_arg=False)
    p.add_argument("--L", type=int, required=True)
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=args.command,
        input=getattr(args, "input", None),
        L=getattr(args, "L", None),
        m=getattr(args, "m", None),
        i=getattr(args, "i", None),
        k=getattr(args, "k", None),
        assignment=getattr(args, "assignment", None),
        kernel=getattr(args, "kernel", "pt"),
        hard_L=getattr(args, "hard_L", None),
        N=getattr(args, "N", 10_000),
        seed=args.seed,
        budget_states=args.budget_states,
        tol=args.tol,
        fmt=args.format,
        out=args.out,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "gap":
            payload = gap_report(cfg)
            code = EXIT_OK
        elif args.command == "verify-lower":
            payload = verify_lower_report(
                _family_from_config(cfg), cfg.budget_states, cfg.tol
            )
            code = EXIT_OK if payload["all_ok"] else EXIT_CHECK_FAILED
        elif args.command == "verify-upper":
            payload = verify_upper_report(cfg)
            code = EXIT_OK if payload["all_ok"] else EXIT_CHECK_FAILED
        elif args.command == "paths":
            payload = paths_rows(cfg)
            code = EXIT_OK
        elif args.command == "instance":
            if cfg.L is None or cfg.L < 1:
                raise ValueError("--L >= 1 is required")
            payload = instance_to_json(build_hard_instance(cfg.L))
            code = EXIT_OK
        elif args.command == "simulate":
            family = _family_from_config(cfg)
            trace = run_parallel_tempering(
                family,
                [uniform_proposal(family.n_atoms)] * (family.L + 1),
                cfg.N,
                cfg.seed,
            )
            prefix = cfg.out or "trace"
            write_trace_csv(trace, prefix + ".csv")
            write_trace_summary(trace, prefix + ".json", family)
            payload = {"trace_csv": prefix + ".csv", "summary_json": prefix + ".json"}
            cfg.out = None  # the files are the artifacts; echo paths to stdout
            code = EXIT_OK
        else:  # f-oracle
            payload = f_oracle_report(cfg.L)
            code = EXIT_OK if payload["all_ok"] else EXIT_CHECK_FAILED
    except BudgetExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValueError, ReversibilityError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _write_payload(payload, cfg)
    return code


if __name__ == "__main__":
    sys.exit(main())
