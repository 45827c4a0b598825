"""Recursive canonical paths between assignments and their congestion.

A path is a sequence of moves applied to a start assignment.  Two move
kinds exist, matching the edges of the comparison chain
:func:`~tempering_lab.kernels.aux_chain_P1`: an adjacent transposition of
levels ``i-1`` and ``i``, and a replacement of the level-0 mode.  Long-range
transpositions are realized recursively (swap to the midpoint, midpoint to
the far end, midpoint back), which keeps every intermediate state within
``O(log)`` displaced levels of the start; the mode-change path between an
assignment and its single-level replacement routes the new mode through
level 0 using the heaviest cold mode as a parking value.

Congestion accounting treats edges as undirected with the symmetric
reversible flow ``pi(x) P(x, y)``; no-op moves (a transposition of equal
modes, or a level-0 set to the current value) contribute no edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import BudgetExceededError
from .kernels import StochasticMatrix
from .measure import AssignmentSpace, ProductAssignment, TemperedFamily


@dataclass(frozen=True)
class AdjSwap:
    """Exchange the modes at levels ``i - 1`` and ``i``; ``i`` in ``1..L``."""

    i: int

    def __post_init__(self):
        if self.i < 1:
            raise ValueError("swap index must be >= 1")


@dataclass(frozen=True)
class SetLevel0:
    """Replace the level-0 mode by ``k``."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("mode must be >= 1")


Move = AdjSwap | SetLevel0


def _apply_move(modes: list, move: Move, m: int) -> None:
    if isinstance(move, AdjSwap):
        if move.i > len(modes) - 1:
            raise ValueError(f"swap index {move.i} exceeds top level {len(modes) - 1}")
        modes[move.i - 1], modes[move.i] = modes[move.i], modes[move.i - 1]
    elif isinstance(move, SetLevel0):
        if move.k > m:
            raise ValueError(f"mode {move.k} exceeds m = {m}")
        modes[0] = move.k
    else:
        raise TypeError(f"unknown move {move!r}")


@dataclass(frozen=True)
class MoveSequence:
    """A start assignment plus an ordered list of moves."""

    start: ProductAssignment
    moves: tuple

    def __post_init__(self):
        moves = tuple(self.moves)
        object.__setattr__(self, "moves", moves)
        for move in moves:
            if isinstance(move, AdjSwap):
                if move.i > self.start.L:
                    raise ValueError(f"swap index {move.i} exceeds top level {self.start.L}")
            elif isinstance(move, SetLevel0):
                if move.k > self.start.m:
                    raise ValueError(f"mode {move.k} exceeds m = {self.start.m}")
            else:
                raise TypeError(f"unknown move {move!r}")

    def __len__(self) -> int:
        return len(self.moves)

    def iter_states(self) -> Iterator[tuple]:
        """All visited assignments as tuples, starting state included."""
        modes = list(self.start.modes)
        yield tuple(modes)
        for move in self.moves:
            _apply_move(modes, move, self.start.m)
            yield tuple(modes)

    def states(self) -> list:
        return [ProductAssignment(s, self.start.m) for s in self.iter_states()]

    def end(self) -> ProductAssignment:
        modes = list(self.start.modes)
        for move in self.moves:
            _apply_move(modes, move, self.start.m)
        return ProductAssignment(tuple(modes), self.start.m)

    def path_states(self) -> list:
        """Visited assignments with no-op moves compressed away.

        Consecutive entries always differ, so consecutive pairs are genuine
        edges; the number of edges is ``len(path_states()) - 1``, which can be
        smaller than ``len(self)`` when moves hit coincident modes.
        """
        out = []
        for state in self.iter_states():
            if not out or state != out[-1]:
                out.append(state)
        return out


def swap_sequence(i: int, j: int) -> list:
    """Adjacent transpositions realizing the exchange of levels ``i`` and ``j``.

    Base case ``j - i = 1`` is the single adjacent swap; otherwise swap to the
    midpoint, midpoint to ``j``, and midpoint back.  Applying the result to
    any assignment exchanges levels ``i`` and ``j`` and restores all others.
    """
    if not 0 <= i < j:
        raise ValueError(f"need 0 <= i < j, got ({i}, {j})")
    if j - i <= 1:
        return [AdjSwap(j)]
    mid = (i + j) // 2
    first = swap_sequence(i, mid)
    return first + swap_sequence(mid, j) + first


@lru_cache(maxsize=None)
def path_length_F(ell: int) -> int:
    """Length of the recursive transposition over distance ``ell``.

    Satisfies ``F(1) = 1`` and ``F(ell) = 2 F(floor(ell/2)) + F(ceil(ell/2))``,
    hence ``F(2^t) = 3^t``.
    """
    if ell < 1:
        raise ValueError("distance must be >= 1")
    if ell == 1:
        return 1
    return 2 * path_length_F(ell // 2) + path_length_F((ell + 1) // 2)


@lru_cache(maxsize=None)
def divergence_bound_D(ell: int) -> int:
    """Recursive bound on the worst intermediate displacement over distance
    ``ell``: ``D(1) = 2`` and ``D(ell) = max(2 + D(ceil), 3 + D(floor))``.

    This is the displacement analogue of :func:`path_length_F` (the two
    recurrences share a symbol in the source analysis; they are distinct
    quantities).  ``D(ell) <= 3 ceil(log2 ell) + 2``.
    """
    if ell < 1:
        raise ValueError("distance must be >= 1")
    if ell == 1:
        return 2
    return max(2 + divergence_bound_D((ell + 1) // 2), 3 + divergence_bound_D(ell // 2))


def apply_moves(assignment: ProductAssignment, moves) -> ProductAssignment:
    """Deterministically apply a move list (or :class:`MoveSequence`)."""
    if isinstance(moves, MoveSequence):
        moves = moves.moves
    modes = list(assignment.modes)
    for move in moves:
        _apply_move(modes, move, assignment.m)
    return ProductAssignment(tuple(modes), assignment.m)


def max_divergence(assignment: ProductAssignment, moves) -> int:
    """Worst Hamming distance from the start over all visited states."""
    if isinstance(moves, MoveSequence):
        moves = moves.moves
    ref = assignment.modes
    modes = list(ref)
    m = assignment.m
    displaced = 0
    worst = 0
    for move in moves:
        touched = (move.i - 1, move.i) if isinstance(move, AdjSwap) else (0,)
        for t in touched:
            displaced -= modes[t] != ref[t]
        _apply_move(modes, move, m)
        for t in touched:
            displaced += modes[t] != ref[t]
        worst = max(worst, displaced)
    return worst


def k_star(family: TemperedFamily) -> int:
    """Smallest mode maximizing the coldest level's mass."""
    return int(np.argmax(family.block_mass[family.L])) + 1


def level0_path(
    assignment: ProductAssignment, i: int, k: int, kstar: int
) -> MoveSequence:
    """Canonical path from an assignment to its level-``i`` replacement by ``k``.

    Five stages: park the heaviest cold mode at level 0, carry it up to level
    ``i``, write ``k`` at level 0, carry it up (returning the parked mode),
    and restore the original level-0 mode.  Total ``3 + 2 F(i)`` moves; for
    ``i = 0`` the path degenerates to the single level-0 replacement.
    """
    L, m = assignment.L, assignment.m
    if not 0 <= i <= L:
        raise ValueError(f"level {i} out of range 0..{L}")
    if not (1 <= k <= m and 1 <= kstar <= m):
        raise ValueError(f"modes must lie in 1..{m}")
    if i == 0:
        return MoveSequence(assignment, (SetLevel0(k),))
    carry = tuple(swap_sequence(0, i))
    moves = (
        (SetLevel0(kstar),)
        + carry
        + (SetLevel0(k),)
        + carry
        + (SetLevel0(assignment.modes[0]),)
    )
    return MoveSequence(assignment, moves)


def canonical_paths(
    family: TemperedFamily, budget: int = 10_000_000
) -> Iterator[MoveSequence]:
    """One canonical path per off-diagonal mode-refresh edge, lazily.

    Paths are emitted for every assignment ``lam``, level ``i``, and mode
    ``k != lam_i``; the diagonal (``k == lam_i``) carries no path.
    """
    space = AssignmentSpace(family.m, family.L + 1)
    if space.size > budget:
        raise BudgetExceededError(f"assignment space has {space.size} states, budget {budget}")
    ks = k_star(family)
    for modes in space:
        lam = ProductAssignment(modes, family.m)
        for i in range(family.L + 1):
            for k in range(1, family.m + 1):
                if k != modes[i]:
                    yield level0_path(lam, i, k, ks)


@dataclass
class CongestionReport:
    """Worst-edge relative load of a path family over a carrier chain."""

    c: float
    argmax_edge: tuple
    per_edge_loads: dict

    def to_dict(self, space: AssignmentSpace | None = None) -> dict:
        def name(idx):
            return list(space.assignment_at(idx)) if space is not None else idx

        edges = [
            {"a": name(a), "b": name(b), "load": load}
            for (a, b), load in sorted(self.per_edge_loads.items())
        ]
        return {
            "c": self.c,
            "argmax_edge": [name(self.argmax_edge[0]), name(self.argmax_edge[1])],
            "edges": edges,
        }

    def to_json(self, space: AssignmentSpace | None = None, **kwargs) -> str:
        return json.dumps(self.to_dict(space), **kwargs)


def congestion(
    P1: StochasticMatrix, P2: StochasticMatrix, paths: Iterable[MoveSequence]
) -> CongestionReport:
    """Congestion of a path family carrying the flows of ``P2`` over ``P1``.

    For every edge of ``P1`` the load is ``sum |gamma| * pi(x) P2(x, y)`` over
    the paths traversing it (length counted after no-op compression, each
    traversal counted); the congestion ``c`` is the worst load divided by the
    edge's own flow.  Both kernels must share their stationary distribution
    and every path step must be a genuine ``P1`` edge.
    """
    if P1.n_states != P2.n_states:
        raise ValueError("P1 and P2 act on different state spaces")
    if float(np.abs(P1.stationary - P2.stationary).max()) > 1e-10:
        raise ValueError("P1 and P2 must share their stationary distribution")
    space = P1.codec if isinstance(P1.codec, AssignmentSpace) else None
    if space is None:
        raise ValueError("P1 must carry an AssignmentSpace codec")
    pi = P1.stationary
    M1 = P1.as_dense()
    M2 = P2.as_dense()

    loads: dict = {}
    covered: set = set()
    for seq in paths:
        states = seq.path_states()
        if len(states) < 2:
            raise ValueError("a path must traverse at least one edge")
        idx = [space.index_of(s) for s in states]
        start, endp = idx[0], idx[-1]
        flow2 = pi[start] * M2[start, endp]
        covered.add((min(start, endp), max(start, endp)))
        length = len(idx) - 1
        for a, b in zip(idx, idx[1:]):
            if pi[a] * M1[a, b] <= 0.0:
                sa, sb = space.assignment_at(a), space.assignment_at(b)
                raise ValueError(f"path step {sa} -> {sb} is not an edge of P1")
            key = (min(a, b), max(a, b))
            loads[key] = loads.get(key, 0.0) + length * flow2

    off = np.nonzero((M2 > 0) & ~np.eye(P2.n_states, dtype=bool))
    required = {(min(a, b), max(a, b)) for a, b in zip(*off)}
    missing = required - covered
    if missing:
        a, b = next(iter(missing))
        raise ValueError(
            f"no path covers the P2 edge {space.assignment_at(a)} -> {space.assignment_at(b)}"
        )

    c = 0.0
    argmax = None
    for (a, b), load in loads.items():
        flow1 = 0.5 * (pi[a] * M1[a, b] + pi[b] * M1[b, a])
        ratio = load / flow1
        if ratio > c:
            c, argmax = ratio, (a, b)
    return CongestionReport(c, argmax, loads)


def edge_multiplicity_check(
    family: TemperedFamily, max_m: int = 3, max_L: int = 3
) -> dict:
    """Count, per ``(i, k, step)``, how many start assignments route the same
    step onto the same edge.

    Steps index genuine transitions (the path as a state sequence, no-op
    moves compressed away), matching how the comparison theorem consumes
    paths.  The historical per-step bound is ``m`` (only the level-0 mode is
    said to stay free); the construction actually erases the level-``i`` mode
    as well when the new mode is written at level 0, so the sharp bound is
    ``m * (m - 1)``.  The report carries both the ``m`` bound and the max
    observed; callers decide which to assert.  Exhaustive over the
    assignment space, guarded by a budget.
    """
    if family.m > max_m or family.L > max_L:
        raise BudgetExceededError(
            f"edge multiplicity enumeration limited to m <= {max_m}, L <= {max_L}"
        )
    space = AssignmentSpace(family.m, family.L + 1)
    ks = k_star(family)
    max_seen = 0
    worst_key = None
    counts: dict = {}
    n_paths = 0
    for modes in space:
        lam = ProductAssignment(modes, family.m)
        for i in range(family.L + 1):
            for k in range(1, family.m + 1):
                if k == modes[i]:
                    continue
                n_paths += 1
                seq = level0_path(lam, i, k, ks)
                states = seq.path_states()
                for step, (a, b) in enumerate(zip(states, states[1:]), start=1):
                    key = (i, k, step, a, b)
                    counts[key] = counts.get(key, 0) + 1
                    if counts[key] > max_seen:
                        max_seen, worst_key = counts[key], key
    return {
        "max_multiplicity": max_seen,
        "bound": family.m,
        "sharp_bound": family.m * max(1, family.m - 1),
        "ok": max_seen <= family.m,
        "worst": worst_key,
        "paths_checked": n_paths,
    }
