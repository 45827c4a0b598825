"""The explicit torpid instance in exact rational arithmetic.

The instance has ``m = L + 1`` modes and inverse temperatures
``(i + 1)/(L + 1)``.  Each mode ``k`` consists of a main uniform block with
weight ``gamma^(2k)`` and volume ``gamma^(-k^2 + 1)`` plus ``L + 1``
satellite blocks shared in shape across modes (weight ``gamma^(2r + 1)``,
volume ``gamma^(-r^2 - r)``), with ``gamma = (L + 1)^3``.  Cross terms
between well-separated modes are dropped exactly, so the mass of mode ``k``
at level ``i`` is proportional to

    gamma^(2(i+1)k - k^2 + 1) + sum_r gamma^((2r+1)(i+1) - r^2 - r),

a sum the code evaluates with arbitrary-precision integers (the exponents
reach ``(L+1)^2 + 1``, far beyond double range).  Everything downstream —
mode-mass bounds, the bottleneck ratio, the constrained swap chain over
level-to-mode permutations, and the Cheeger certificate — is computed
exactly and only converted to floating point at the eigensolve boundary.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import BudgetExceededError
from .kernels import StochasticMatrix
from .measure import FiniteTarget, TemperatureLadder, TemperedFamily
from .spectral import SpectrumReport, spectral_gap


def _floor_log2(n: int) -> int:
    if n < 1:
        raise ValueError("floor log2 needs n >= 1")
    return n.bit_length() - 1


@dataclass(frozen=True)
class HardInstance:
    """Exact mode masses and block parameters of the torpid construction."""

    L: int
    m: int
    gamma: Fraction
    mode_masses: tuple  # (L+1) rows of m Fractions, each row sums to 1
    core_weights: tuple  # w_k = gamma^(2k), k = 1..m
    core_volumes: tuple  # V_k = gamma^(-k^2 + 1)
    satellite_weights: tuple  # w_r = gamma^(2r + 1), r = 0..L
    satellite_volumes: tuple  # V_r = gamma^(-r^2 - r)

    def mass(self, i: int, k: int) -> Fraction:
        """Exact mass of mode ``k`` (1-based) at level ``i``."""
        return self.mode_masses[i][k - 1]

    def mass_floats(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.mode_masses])


def build_hard_instance(L: int) -> HardInstance:
    """Construct the instance for ``L + 1`` levels and ``m = L + 1`` modes."""
    if L < 1:
        raise ValueError("the construction needs L >= 1")
    m = L + 1
    gamma = Fraction((L + 1) ** 3)
    rows = []
    for i in range(L + 1):
        sat = sum(gamma ** ((2 * r + 1) * (i + 1) - r * r - r) for r in range(L + 1))
        raw = [gamma ** (2 * (i + 1) * k - k * k + 1) + sat for k in range(1, m + 1)]
        total = sum(raw)
        rows.append(tuple(x / total for x in raw))
    return HardInstance(
        L=L,
        m=m,
        gamma=gamma,
        mode_masses=tuple(rows),
        core_weights=tuple(gamma ** (2 * k) for k in range(1, m + 1)),
        core_volumes=tuple(gamma ** (-k * k + 1) for k in range(1, m + 1)),
        satellite_weights=tuple(gamma ** (2 * r + 1) for r in range(L + 1)),
        satellite_volumes=tuple(gamma ** (-r * r - r) for r in range(L + 1)),
    )


def level_numerators(inst: HardInstance) -> list:
    """Integer-valued mode masses per level, up to a per-level scale.

    Row ``i`` equals ``mode_masses[i]`` times a positive per-level constant;
    per-level scales cancel in every ratio and every normalized sum, which
    lets the permutation-space computations run on plain big integers.
    """
    g = int(inst.gamma)
    out = []
    for i in range(inst.L + 1):
        exps = [2 * (i + 1) * k - k * k + 1 for k in range(1, inst.m + 1)]
        sat_exps = [(2 * r + 1) * (i + 1) - r * r - r for r in range(inst.L + 1)]
        shift = min(exps + sat_exps)
        sat = sum(g ** (e - shift) for e in sat_exps)
        out.append([g ** (e - shift) + sat for e in exps])
    return out


@dataclass
class ModeMassReport:
    """Exact verification of the per-level mode-mass bounds."""

    L: int
    ok: bool
    diag_margins: dict  # i -> mass(i, i+1) - (1 - 1/(L+1)), must be > 0
    lower_margins: dict  # (i, k) -> mass - 1/(2(L+1)^3), must be > 0
    upper_margins: dict  # (i, k) -> 1/(L+1)^2 - mass, must be > 0

    def min_margin(self) -> Fraction:
        return min(
            list(self.diag_margins.values())
            + list(self.lower_margins.values())
            + list(self.upper_margins.values())
        )

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "ok": self.ok,
            "min_margin": str(self.min_margin()),
            "diag_margins": {str(i): str(v) for i, v in self.diag_margins.items()},
            "lower_margins": {f"{i},{k}": str(v) for (i, k), v in self.lower_margins.items()},
            "upper_margins": {f"{i},{k}": str(v) for (i, k), v in self.upper_margins.items()},
        }


def verify_mode_mass_bounds(inst: HardInstance) -> ModeMassReport:
    """Check, exactly, that level ``i`` is dominated by mode ``i + 1``.

    Diagonal: ``mass(i, i+1) > 1 - 1/(L+1)``.  Off-diagonal (``k != i+1``):
    ``1/(2(L+1)^3) < mass(i, k) < 1/(L+1)^2``.  All comparisons are rational
    with zero tolerance.
    """
    Lp1 = inst.L + 1
    diag_floor = 1 - Fraction(1, Lp1)
    lower = Fraction(1, 2 * Lp1**3)
    upper = Fraction(1, Lp1**2)
    diag_margins, lower_margins, upper_margins = {}, {}, {}
    ok = True
    for i in range(inst.L + 1):
        for k in range(1, inst.m + 1):
            mass = inst.mass(i, k)
            if k == i + 1:
                diag_margins[i] = mass - diag_floor
                ok &= mass > diag_floor
            else:
                lower_margins[(i, k)] = mass - lower
                upper_margins[(i, k)] = upper - mass
                ok &= lower < mass < upper
    return ModeMassReport(inst.L, ok, diag_margins, lower_margins, upper_margins)


def exact_bottleneck(inst: HardInstance) -> Fraction:
    """The bottleneck ratio of the instance, exactly."""
    best = None
    for k in range(1, inst.m + 1):
        prod = Fraction(1)
        for i in range(1, inst.L + 1):
            ratio = inst.mass(i - 1, k) / inst.mass(i, k)
            prod *= min(Fraction(1), ratio)
        best = prod if best is None else min(best, prod)
    return best


@dataclass
class BottleneckReport:
    L: int
    B: Fraction
    bound: Fraction
    ok: bool

    def margin(self) -> Fraction:
        return self.B - self.bound

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "B": str(self.B),
            "B_float": float(self.B),
            "bound": str(self.bound),
            "margin": str(self.margin()),
            "ok": self.ok,
        }


def verify_bottleneck_bound(inst: HardInstance) -> BottleneckReport:
    """Exact check ``B > 1/(L+1)^7``."""
    B = exact_bottleneck(inst)
    bound = Fraction(1, (inst.L + 1) ** 7)
    return BottleneckReport(inst.L, B, bound, B > bound)


class PermutationSpace:
    """Codec for the level-to-mode permutations reachable by adjacent swaps.

    States are all permutations of ``(1, ..., m)`` in lexicographic order
    (``itertools.permutations`` order); index 0 is the home assignment
    ``(1, ..., m)``.
    """

    def __init__(self, m: int):
        self.m = m
        self.states = list(itertools.permutations(range(1, m + 1)))
        self._index = {s: i for i, s in enumerate(self.states)}

    @property
    def size(self) -> int:
        return len(self.states)

    def index_of(self, state: Sequence[int]) -> int:
        return self._index[tuple(state)]

    def state_at(self, idx: int) -> tuple:
        return self.states[idx]

    def __iter__(self) -> Iterator[tuple]:
        return iter(self.states)

    def labels(self) -> list:
        return [",".join(map(str, s)) for s in self.states]


def _swap_acceptance_tables(inst: HardInstance) -> list:
    """``tables[i-1][a-1][b-1]``: probability of accepting the swap of modes
    ``a`` (level i-1) and ``b`` (level i), exact ratios rounded once."""
    nums = level_numerators(inst)
    tables = []
    for i in range(1, inst.L + 1):
        hot, cold = nums[i - 1], nums[i]
        tab = np.ones((inst.m, inst.m))
        for a in range(inst.m):
            for b in range(inst.m):
                if a == b:
                    continue
                ratio = Fraction(hot[b] * cold[a], hot[a] * cold[b])
                if ratio < 1:
                    tab[a, b] = float(ratio)
        tables.append(tab)
    return tables


def stationary_numerators(inst: HardInstance, space: PermutationSpace) -> list:
    """Unnormalized exact weights of the restricted product law, one big
    integer per permutation."""
    nums = level_numerators(inst)
    return [
        math.prod(nums[i][state[i] - 1] for i in range(inst.L + 1)) for state in space
    ]


def constrained_projected_chain(
    inst: HardInstance, max_L: int = 8
) -> StochasticMatrix:
    """Metropolis chain over mode permutations with adjacent swaps only.

    Proposes the swap of levels ``(i-1, i)`` with probability ``1/(2L)`` each
    and accepts with the restricted product-law ratio; the remainder holds.
    This is the projected tempering dynamic under exact mode separation with
    no within-level mode moves.
    """
    if inst.L > max_L:
        raise BudgetExceededError(
            f"constrained chain over {inst.m}! states needs L <= {max_L}"
        )
    space = PermutationSpace(inst.m)
    n = space.size
    weights = stationary_numerators(inst, space)
    total = sum(weights)
    pi = np.array([float(Fraction(w, total)) for w in weights])
    tables = _swap_acceptance_tables(inst)

    L = inst.L
    prop = 1.0 / (2.0 * L)
    rows = np.empty(n * L, dtype=np.int64)
    cols = np.empty(n * L, dtype=np.int64)
    data = np.empty(n * L)
    hold = np.ones(n)
    pos = 0
    for s_idx, state in enumerate(space):
        for i in range(1, L + 1):
            a, b = state[i - 1], state[i]
            swapped = state[: i - 1] + (b, a) + state[i + 1 :]
            alpha = prop * tables[i - 1][a - 1, b - 1]
            rows[pos] = s_idx
            cols[pos] = space.index_of(swapped)
            data[pos] = alpha
            hold[s_idx] -= alpha
            pos += 1
    entries = sp.coo_matrix(
        (
            np.concatenate([data, hold]),
            (np.concatenate([rows, np.arange(n)]), np.concatenate([cols, np.arange(n)])),
        ),
        shape=(n, n),
    ).tocsr()
    if n <= 2000:
        entries = entries.toarray()
    return StochasticMatrix(entries, pi, space)


def enumerate_S(inst: HardInstance) -> list:
    """States reachable from home through low-divergence intermediate states.

    Breadth-first search from ``(1, ..., m)`` over adjacent swaps, admitting
    only states that differ from home in at most ``floor(log2 L) - 1``
    levels; with a negative cap the set is just the home state.  Returns the
    reached permutations sorted lexicographically.
    """
    home = tuple(range(1, inst.m + 1))
    h = _floor_log2(inst.L) - 1
    if h <= 0:
        # one adjacent swap already displaces two levels
        return [home]
    seen = {home}
    frontier = [home]
    while frontier:
        nxt = []
        for state in frontier:
            for i in range(1, inst.L + 1):
                cand = state[: i - 1] + (state[i], state[i - 1]) + state[i + 1 :]
                if cand in seen:
                    continue
                divergence = sum(c != k for c, k in zip(cand, home))
                if divergence <= h:
                    seen.add(cand)
                    nxt.append(cand)
        frontier = nxt
    return sorted(seen)


@dataclass
class CertificateReport:
    """Cheeger-style upper-bound certificate for the constrained chain."""

    L: int
    S_size: int
    Sc_size: int
    mass_S: Fraction
    mass_Sc: Fraction
    boundary_flow: Fraction
    cheeger_2phiS: float
    bound_rhs: float
    mass_S_ok: bool  # mass_S > 1/(2e)
    mass_Sc_ok: bool  # mass_Sc > 1/(4e(L+1)^6)
    flow_ok: bool  # boundary_flow <= 4e (L+1)^-(floor(log2 L) - 2)
    measured_gap: float | None = None
    gap_ok: bool | None = None  # measured_gap <= cheeger_2phiS
    gap_report: SpectrumReport | None = None

    def all_ok(self) -> bool:
        checks = [self.mass_S_ok, self.mass_Sc_ok, self.flow_ok]
        if self.gap_ok is not None:
            checks.append(self.gap_ok)
        return all(checks)

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "S_size": self.S_size,
            "Sc_size": self.Sc_size,
            "mass_S": str(self.mass_S),
            "mass_S_float": float(self.mass_S),
            "mass_Sc": str(self.mass_Sc),
            "mass_Sc_float": float(self.mass_Sc),
            "boundary_flow": str(self.boundary_flow),
            "boundary_flow_float": float(self.boundary_flow),
            "cheeger_2phiS": self.cheeger_2phiS,
            "bound_rhs": self.bound_rhs,
            "mass_S_ok": self.mass_S_ok,
            "mass_Sc_ok": self.mass_Sc_ok,
            "flow_ok": self.flow_ok,
            "measured_gap": self.measured_gap,
            "gap_ok": self.gap_ok,
            "gap_method": None if self.gap_report is None else self.gap_report.method,
            "gap_residual": None if self.gap_report is None else self.gap_report.residual,
            "all_ok": self.all_ok(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def certificate(
    inst: HardInstance,
    eigensolve: bool = True,
    max_L: int = 8,
    gap_tol: float = 1e-8,
    gap_max_iter: int = 20_000,
) -> CertificateReport:
    """Assemble the upper-bound certificate for the constrained chain.

    The low-divergence set's mass, its complement's mass, and the boundary
    flow are exact rationals; the flow and mass inequalities are the
    lemma-level checks and ``2 phi(S)`` is the Cheeger bound the measured
    gap must respect.  Check failures are reported, not raised.

    The sparse eigensolve budget defaults to 20k iterations: the Rayleigh
    estimate only decreases toward the true gap, so a capped run still
    certifies ``gap <= 2 phi(S)``; the achieved residual is reported.
    """
    space = PermutationSpace(inst.m)
    weights = stationary_numerators(inst, space)
    total = sum(weights)
    S = enumerate_S(inst)
    S_idx = [space.index_of(s) for s in S]
    S_set = set(S)
    mass_S = Fraction(sum(weights[i] for i in S_idx), total)
    mass_Sc = 1 - mass_S

    nums = level_numerators(inst)
    prop = Fraction(1, 2 * inst.L)
    flow = Fraction(0)
    for state in S:
        w = Fraction(weights[space.index_of(state)], total)
        for i in range(1, inst.L + 1):
            swapped = state[: i - 1] + (state[i], state[i - 1]) + state[i + 1 :]
            if swapped in S_set:
                continue
            a, b = state[i - 1], state[i]
            ratio = Fraction(nums[i - 1][b - 1] * nums[i][a - 1],
                             nums[i - 1][a - 1] * nums[i][b - 1])
            flow += w * prop * min(Fraction(1), ratio)

    two_phi = float(2 * flow / min(mass_S, mass_Sc))
    e = math.e
    flog = _floor_log2(inst.L)
    report = CertificateReport(
        L=inst.L,
        S_size=len(S),
        Sc_size=space.size - len(S),
        mass_S=mass_S,
        mass_Sc=mass_Sc,
        boundary_flow=flow,
        cheeger_2phiS=two_phi,
        bound_rhs=32 * e * e * float(Fraction(inst.L + 1) ** -(flog - 8)),
        mass_S_ok=float(mass_S) > 1 / (2 * e),
        mass_Sc_ok=float(mass_Sc) > 1 / (4 * e * (inst.L + 1) ** 6),
        flow_ok=float(flow) <= 4 * e * float(Fraction(inst.L + 1) ** -(flog - 2)),
    )
    if eigensolve:
        chain = constrained_projected_chain(inst, max_L=max_L)
        gap = spectral_gap(chain, tol=gap_tol, max_iter=gap_max_iter)
        report.measured_gap = gap.gap
        report.gap_ok = gap.gap <= two_phi + 1e-8
        report.gap_report = gap
    return report


def min_divergence_f(L: int, max_L: int = 8) -> int:
    """Minimax displacement needed to carry the level-0 sample to level ``L``.

    Over all adjacent-swap paths on levels ``0..L`` that move the home
    level-0 sample to level ``L``, minimizes the worst number of displaced
    levels within the window ``1..L`` at any point; computed by threshold
    search (breadth-first reachability in the divergence-capped subgraph for
    h = 1, 2, ...).
    """
    if L < 1:
        raise ValueError("needs L >= 1")
    if L > max_L:
        raise BudgetExceededError(f"minimax search over {L + 1}! states needs L <= {max_L}")
    home = tuple(range(L + 1))  # token v at level v; token 0 is tracked
    for h in range(1, L + 2):
        seen = {home}
        frontier = [home]
        while frontier:
            nxt = []
            for state in frontier:
                for p in range(L):
                    cand = state[:p] + (state[p + 1], state[p]) + state[p + 2 :]
                    if cand in seen:
                        continue
                    divergence = sum(
                        cand[q] != q for q in range(1, L + 1)
                    )
                    if divergence > h:
                        continue
                    if cand[L] == 0:
                        return h
                    seen.add(cand)
                    nxt.append(cand)
            frontier = nxt
    raise RuntimeError("threshold search failed; the full window cap must suffice")


def block_family(inst: HardInstance) -> TemperedFamily:
    """The instance as a finite family with one atom per uniform block.

    Level ``i`` puts mass proportional to ``weight^(i+1) * volume`` on each
    block, which is exactly the block structure of the construction; note
    the volume factors make this family unreachable by tempering a single
    weight vector, so the level rows are set directly.  Only small ``L``
    stay within double range after normalization.
    """
    n = inst.m * (inst.L + 2)
    labels = []
    rows = []
    for i in range(inst.L + 1):
        row = []
        for k in range(1, inst.m + 1):
            row.append(inst.core_weights[k - 1] ** (i + 1) * inst.core_volumes[k - 1])
            for r in range(inst.L + 1):
                row.append(
                    inst.satellite_weights[r] ** (i + 1) * inst.satellite_volumes[r]
                )
        total = sum(row)
        rows.append([float(x / total) for x in row])
    for k in range(1, inst.m + 1):
        labels.extend([k] * (inst.L + 2))
    level_rows = np.array(rows)
    if level_rows.min() <= 0.0:
        raise ValueError(
            "block masses underflow double precision at this L; use the exact "
            "mode-mass interface instead"
        )
    target = FiniteTarget(level_rows[inst.L], np.array(labels), inst.m)
    ladder = TemperatureLadder(np.array([(i + 1) / (inst.L + 1) for i in range(inst.L + 1)]))
    return TemperedFamily(level_rows, target, ladder)


def instance_to_json(inst: HardInstance) -> dict:
    """Exact export; every rational is a ``num/den`` string."""
    return {
        "L": inst.L,
        "m": inst.m,
        "gamma": str(inst.gamma),
        "mode_masses": [[str(x) for x in row] for row in inst.mode_masses],
        "core_weights": [str(x) for x in inst.core_weights],
        "core_volumes": [str(x) for x in inst.core_volumes],
        "satellite_weights": [str(x) for x in inst.satellite_weights],
        "satellite_volumes": [str(x) for x in inst.satellite_volumes],
    }
