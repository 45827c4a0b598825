"""Transition kernels: level updates, product update, swaps, projections.

Every kernel is wrapped in :class:`StochasticMatrix`, which validates row
stochasticity and (by default) detailed balance against the declared
stationary distribution at construction time.  Product-space states are
indexed mixed-radix with level 0 as the most significant digit; matrices
above ``DENSE_LIMIT`` states are stored sparse (CSR).

Update and swap kernels carry the 1/2 holding probability that makes them
nonnegative definite, so their spectral gaps translate into mixing bounds.
The parallel tempering kernel is exposed both as the reversible mixture
``(T + Q) / 2`` (used throughout the analysis) and as the matrix composition
``T @ Q`` (update sweep then swap sweep), which is generally not reversible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import InitVar, dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import BudgetExceededError, ReversibilityError
from .measure import (
    DEFAULT_STATE_BUDGET,
    AssignmentSpace,
    TemperedFamily,
    pi_bar,
    swap_acceptance_marginal,
)

#: tolerance for row sums, detailed balance, and stationarity checks
KERNEL_TOL = 1e-10
#: states at or below which product kernels are stored dense
DENSE_LIMIT = 2000


@dataclass(frozen=True)
class StochasticMatrix:
    """A finite kernel paired with the distribution it should preserve.

    ``matrix`` is dense or CSR, ``stationary`` is a probability vector, and
    ``codec`` (optional) maps state indices to semantic states.  Rows must
    sum to one within ``KERNEL_TOL`` and the stationary vector must be
    preserved; detailed balance is enforced unless ``require_reversible``
    is False (used only for the non-reversible sweep composition).
    """

    matrix: object
    stationary: np.ndarray
    codec: object | None = None
    require_reversible: InitVar[bool] = True

    def __post_init__(self, require_reversible: bool):
        matrix = self.matrix
        if sp.issparse(matrix):
            matrix = matrix.tocsr()
        else:
            matrix = np.asarray(matrix, dtype=float)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValueError("kernel must be a square matrix")
            matrix = matrix.copy()
            matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        pi = np.array(self.stationary, dtype=float)
        pi.setflags(write=False)
        object.__setattr__(self, "stationary", pi)

        n = matrix.shape[0]
        if pi.shape != (n,):
            raise ValueError(f"stationary must have shape ({n},), got {pi.shape}")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > KERNEL_TOL:
            raise ValueError("stationary must be a probability vector")
        res = self.row_sum_residual()
        if res > KERNEL_TOL:
            raise ValueError(f"rows must sum to 1 within {KERNEL_TOL}, residual {res:.3e}")
        stat_res = float(np.abs(pi @ matrix - pi).max())
        if stat_res > 1e-9:
            raise ValueError(f"declared stationary is not preserved, residual {stat_res:.3e}")
        db = self.detailed_balance_residual()
        object.__setattr__(self, "reversible", bool(db <= KERNEL_TOL))
        if require_reversible and not self.reversible:
            raise ReversibilityError(
                f"kernel is not reversible: detailed-balance residual {db:.3e}"
            )

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def as_dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def diagonal(self) -> np.ndarray:
        return np.asarray(self.matrix.diagonal())

    def row_sum_residual(self) -> float:
        sums = np.asarray(self.matrix.sum(axis=1)).ravel()
        return float(np.abs(sums - 1.0).max())

    def detailed_balance_residual(self) -> float:
        """Max absolute asymmetry of the flow matrix ``diag(pi) @ P``."""
        if self.is_sparse:
            flows = self.matrix.multiply(self.stationary[:, None])
            gap = (flows - flows.T).tocoo()
            return float(np.abs(gap.data).max()) if gap.nnz else 0.0
        flows = self.stationary[:, None] * self.matrix
        return float(np.abs(flows - flows.T).max())


@dataclass(frozen=True)
class ProductSpace:
    """Codec for product states ``(theta_0, ..., theta_L)`` over atoms.

    Mixed-radix with level 0 most significant:
    ``index = sum(theta_i * n_atoms^(L - i))``.
    """

    n_atoms: int
    n_levels: int

    @property
    def size(self) -> int:
        return self.n_atoms ** self.n_levels

    def index_of(self, atoms: Sequence[int]) -> int:
        if len(atoms) != self.n_levels:
            raise ValueError(f"state must have {self.n_levels} levels")
        idx = 0
        for a in atoms:
            if not 0 <= a < self.n_atoms:
                raise ValueError(f"atom {a} out of range")
            idx = idx * self.n_atoms + a
        return idx

    def state_at(self, idx: int) -> tuple:
        if not 0 <= idx < self.size:
            raise ValueError(f"index {idx} out of range")
        digits = []
        for _ in range(self.n_levels):
            digits.append(idx % self.n_atoms)
            idx //= self.n_atoms
        return tuple(reversed(digits))

    def __iter__(self) -> Iterator[tuple]:
        for idx in range(self.size):
            yield self.state_at(idx)

    def digit(self, indices: np.ndarray, level: int) -> np.ndarray:
        """Vectorized extraction of the atom at ``level`` from state indices."""
        return (indices // self.n_atoms ** (self.n_levels - 1 - level)) % self.n_atoms

    def labels(self) -> list:
        return [",".join(map(str, s)) for s in self]


def product_stationary(family: TemperedFamily) -> np.ndarray:
    """The product law ``pi_0 x ... x pi_L`` over product states."""
    out = family.levels[0].copy()
    for i in range(1, family.L + 1):
        out = (out[:, None] * family.levels[i][None, :]).ravel()
    return out


def _check_size(size: int, budget: int, what: str) -> None:
    if size > budget:
        raise BudgetExceededError(f"{what} has {size} states, budget is {budget}")


def _wrap(entries, stationary, codec=None, require_reversible=True) -> StochasticMatrix:
    if sp.issparse(entries) and entries.shape[0] <= DENSE_LIMIT:
        entries = entries.toarray()
    return StochasticMatrix(entries, stationary, codec, require_reversible)


def uniform_proposal(n_atoms: int) -> np.ndarray:
    """The flat symmetric proposal over all atoms (including the current one)."""
    return np.full((n_atoms, n_atoms), 1.0 / n_atoms)


def metropolis_level_kernel(level_dist: np.ndarray, proposal: np.ndarray) -> StochasticMatrix:
    """Half-lazy Metropolis kernel for one temperature level.

    Off-diagonal mass ``(1/2) * proposal(x, y) * min(1, pi(y)/pi(x))``; the
    remainder sits on the diagonal, so every diagonal entry is at least 1/2.
    The proposal must be symmetric: the general Hastings correction is out
    of scope here.
    """
    pi = np.asarray(level_dist, dtype=float)
    prop = np.asarray(proposal, dtype=float)
    n = len(pi)
    if prop.shape != (n, n):
        raise ValueError(f"proposal must be {n}x{n}, got {prop.shape}")
    if np.any(pi <= 0) or abs(pi.sum() - 1.0) > KERNEL_TOL:
        raise ValueError("level distribution must be positive and normalized")
    if float(np.abs(prop - prop.T).max()) > 1e-12:
        raise ValueError("proposal must be symmetric (Hastings correction unsupported)")
    if float(np.abs(prop.sum(axis=1) - 1.0).max()) > KERNEL_TOL:
        raise ValueError("proposal rows must sum to 1")
    accept = np.minimum(1.0, pi[None, :] / pi[:, None])
    off = 0.5 * prop * accept
    np.fill_diagonal(off, 0.0)
    kernel = off + np.diag(1.0 - off.sum(axis=1))
    return StochasticMatrix(kernel, pi)


def product_update_T(
    family: TemperedFamily,
    level_kernels: Sequence[StochasticMatrix],
    budget: int = DEFAULT_STATE_BUDGET,
) -> StochasticMatrix:
    """Product-space update kernel: pick a level uniformly, move it, hold rest.

    With probability ``1/(2(L+1))`` coordinate ``i`` moves by its level
    kernel; the leftover 1/2 is extra holding.  Reversible with respect to
    the product law.
    """
    n, L = family.n_atoms, family.L
    if len(level_kernels) != L + 1:
        raise ValueError(f"need {L + 1} level kernels, got {len(level_kernels)}")
    for i, kern in enumerate(level_kernels):
        if kern.n_states != n:
            raise ValueError(f"level kernel {i} acts on {kern.n_states} atoms, expected {n}")
        if float(np.abs(kern.stationary - family.level(i)).max()) > KERNEL_TOL:
            raise ValueError(f"level kernel {i} is not stationary for level {i}")
    space = ProductSpace(n, L + 1)
    _check_size(space.size, budget, "product space")
    weight = 1.0 / (2.0 * (L + 1))
    total = sp.identity(space.size, format="csr") * 0.5
    for i, kern in enumerate(level_kernels):
        mat = sp.csr_matrix(kern.matrix) if not kern.is_sparse else kern.matrix
        lifted = sp.kron(
            sp.identity(n**i, format="csr"),
            sp.kron(mat, sp.identity(n ** (L - i), format="csr"), format="csr"),
            format="csr",
        )
        total = total + weight * lifted
    return _wrap(total, product_stationary(family), space)


def _swap_ratio_tables(family: TemperedFamily) -> list:
    """Per-pair acceptance tables: ``tables[i-1][x, y]`` is the probability of
    accepting a swap of atoms ``x`` (level i-1) and ``y`` (level i)."""
    tables = []
    for i in range(1, family.L + 1):
        hot, cold = family.levels[i - 1], family.levels[i]
        ratio = np.outer(cold, hot) / np.outer(hot, cold)
        tables.append(np.minimum(1.0, ratio))
    return tables


def swap_kernel_Q(
    family: TemperedFamily, budget: int = DEFAULT_STATE_BUDGET
) -> StochasticMatrix:
    """Adjacent-pair swap kernel on the product space.

    Each pair ``(i-1, i)`` is proposed with probability ``1/(2L)`` and the
    exchange is accepted with the usual tempering ratio; everything else
    (including accepted no-op swaps) holds.
    """
    n, L = family.n_atoms, family.L
    if L < 1:
        raise ValueError("swap kernel needs at least two levels")
    space = ProductSpace(n, L + 1)
    _check_size(space.size, budget, "product space")
    tables = _swap_ratio_tables(family)
    states = np.arange(space.size)
    rows, cols, data = [], [], []
    hold = np.ones(space.size)
    for i in range(1, L + 1):
        a = space.digit(states, i - 1)
        b = space.digit(states, i)
        alpha = tables[i - 1][a, b] / (2.0 * L)
        moved = a != b
        stride = n ** (L - i + 1) - n ** (L - i)
        rows.append(states[moved])
        cols.append(states[moved] + (b[moved] - a[moved]) * stride)
        data.append(alpha[moved])
        hold[moved] -= alpha[moved]
    rows.append(states)
    cols.append(states)
    data.append(hold)
    entries = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.size, space.size),
    ).tocsr()
    return _wrap(entries, product_stationary(family), space)


def pt_kernel(T: StochasticMatrix, Q: StochasticMatrix) -> StochasticMatrix:
    """The reversible parallel tempering kernel ``(T + Q) / 2``."""
    if T.n_states != Q.n_states:
        raise ValueError("T and Q act on different state spaces")
    if float(np.abs(T.stationary - Q.stationary).max()) > KERNEL_TOL:
        raise ValueError("T and Q have different stationary distributions")
    if T.is_sparse or Q.is_sparse:
        a = sp.csr_matrix(T.matrix) if not T.is_sparse else T.matrix
        b = sp.csr_matrix(Q.matrix) if not Q.is_sparse else Q.matrix
        mix = 0.5 * (a + b)
    else:
        mix = 0.5 * (T.as_dense() + Q.as_dense())
    return _wrap(mix, T.stationary, T.codec or Q.codec)


def pt_composition(T: StochasticMatrix, Q: StochasticMatrix) -> StochasticMatrix:
    """Update-then-swap composition ``T @ Q``.

    This matches the per-iteration order of the sampler but is generally not
    reversible; it is exposed for comparison only and carries
    ``reversible=False`` unless detailed balance happens to hold.
    """
    if T.n_states != Q.n_states:
        raise ValueError("T and Q act on different state spaces")
    if float(np.abs(T.stationary - Q.stationary).max()) > KERNEL_TOL:
        raise ValueError("T and Q have different stationary distributions")
    composed = T.matrix @ Q.matrix
    return _wrap(composed, T.stationary, T.codec or Q.codec, require_reversible=False)


def project(P: StochasticMatrix, block_labels: Sequence) -> StochasticMatrix:
    """Block-average a kernel over a partition of its states.

    ``block_labels[x]`` names the block of state ``x``; blocks are indexed by
    sorted unique label.  The projected kernel is
    ``(1/pi(A_k1)) * sum_{x in A_k1, y in A_k2} pi(x) P(x, y)`` with the
    block-mass vector as its stationary distribution.
    """
    labels = np.asarray(block_labels)
    if labels.shape != (P.n_states,):
        raise ValueError(f"labels must have shape ({P.n_states},)")
    uniq, inverse = np.unique(labels, return_inverse=True)
    K = len(uniq)
    pi = P.stationary
    masses = np.bincount(inverse, weights=pi, minlength=K)
    if np.any(masses <= 0):
        raise ValueError("every block must have positive stationary mass")
    onehot = np.zeros((P.n_states, K))
    onehot[np.arange(P.n_states), inverse] = 1.0
    if P.is_sparse:
        flows = P.matrix.multiply(pi[:, None])
        block_flows = np.asarray(onehot.T @ (flows @ onehot))
    else:
        block_flows = onehot.T @ (pi[:, None] * P.as_dense()) @ onehot
    projected = block_flows / masses[:, None]
    return StochasticMatrix(
        projected, masses, tuple(uniq.tolist()), require_reversible=P.reversible
    )


def restrict(P: StochasticMatrix, subset: Sequence[int]) -> StochasticMatrix:
    """Confine a kernel to a subset, returning escaping mass to the diagonal.

    ``P|_A(x, y) = P(x, y) + [x == y] * P(x, A^c)``, reversible with respect
    to the stationary distribution renormalized to ``A``.
    """
    idx = np.asarray(sorted(set(int(i) for i in subset)), dtype=int)
    if len(idx) == 0:
        raise ValueError("subset must be nonempty")
    if np.any(idx < 0) or np.any(idx >= P.n_states):
        raise ValueError("subset contains out-of-range state indices")
    mass = float(P.stationary[idx].sum())
    if mass <= 0:
        raise ValueError("subset must have positive stationary mass")
    if len(idx) == P.n_states:
        return P
    if P.is_sparse:
        sub = P.matrix[idx][:, idx].toarray()
    else:
        sub = P.as_dense()[np.ix_(idx, idx)].copy()
    escape = np.clip(1.0 - sub.sum(axis=1), 0.0, None)
    sub[np.diag_indices_from(sub)] += escape
    return StochasticMatrix(
        sub, P.stationary[idx] / mass, tuple(idx.tolist()), require_reversible=P.reversible
    )


def projected_update_chain(
    family: TemperedFamily, level_kernel: StochasticMatrix, i: int
) -> StochasticMatrix:
    """Projection of the level-``i`` update kernel onto the mode partition."""
    if not 0 <= i <= family.L:
        raise ValueError(f"level {i} out of range 0..{family.L}")
    if float(np.abs(level_kernel.stationary - family.level(i)).max()) > KERNEL_TOL:
        raise ValueError(f"kernel is not stationary for level {i}")
    return project(level_kernel, family.target.partition_labels)


def aux_chain_P1(
    family: TemperedFamily, budget: int = DEFAULT_STATE_BUDGET
) -> StochasticMatrix:
    """Comparison chain on assignments: projected swaps plus level-0 refresh.

    With probability 1/2 make a projected swap move (the projection of the
    swap kernel onto assignment blocks, computed here in closed form from the
    stationary swap-acceptance marginals), with probability ``1/(2(L+1))``
    redraw the level-0 mode from the level-0 block masses, and otherwise
    hold.  Reversible with respect to the product law over assignments.
    """
    m, L = family.m, family.L
    if L < 1:
        raise ValueError("the comparison chain needs at least two levels")
    space = AssignmentSpace(m, L + 1)
    _check_size(space.size, budget, "assignment space")
    sam = np.empty((L, m, m))
    for i in range(1, L + 1):
        for k1 in range(1, m + 1):
            for k2 in range(1, m + 1):
                sam[i - 1, k1 - 1, k2 - 1] = swap_acceptance_marginal(family, i, k1, k2)

    states = np.arange(space.size)
    matrix = np.zeros((space.size, space.size))
    hold = np.full(space.size, 0.5)  # the swap half, before acceptance leaks
    for i in range(1, L + 1):
        a = space.digit(states, i - 1)
        b = space.digit(states, i)
        alpha = 0.5 * sam[i - 1][a, b] / (2.0 * L)
        moved = a != b
        stride = m ** (L - i + 1) - m ** (L - i)
        targets = states[moved] + (b[moved] - a[moved]) * stride
        np.add.at(matrix, (states[moved], targets), alpha[moved])
        hold[moved] -= alpha[moved]

    refresh = 1.0 / (2.0 * (L + 1))
    d0 = space.digit(states, 0)
    for k in range(m):
        targets = states + (k - d0) * m**L
        np.add.at(matrix, (states, targets), refresh * family.block_mass[0, k])

    matrix[states, states] += hold + (0.5 - refresh)
    return _wrap(matrix, pi_bar(family, budget), space)


def aux_chain_P2(
    family: TemperedFamily, budget: int = DEFAULT_STATE_BUDGET
) -> StochasticMatrix:
    """Mode-refresh chain on assignments: pick a level uniformly, redraw it.

    ``P2(lam, lam_[i,k]) = pi_i(A_k) / (L + 1)``, with the re-draws that hit
    the current mode accumulating on the diagonal.  Shares its stationary
    distribution with :func:`aux_chain_P1` exactly.
    """
    m, L = family.m, family.L
    space = AssignmentSpace(m, L + 1)
    _check_size(space.size, budget, "assignment space")
    states = np.arange(space.size)
    matrix = np.zeros((space.size, space.size))
    weight = 1.0 / (L + 1)
    for i in range(L + 1):
        d = space.digit(states, i)
        stride = m ** (L - i)
        for k in range(m):
            targets = states + (k - d) * stride
            np.add.at(matrix, (states, targets), weight * family.block_mass[i, k])
    return _wrap(matrix, pi_bar(family, budget), space)


def default_level_kernels(
    family: TemperedFamily, proposal: np.ndarray | None = None
) -> list:
    """Half-lazy Metropolis kernels for every level under one shared proposal
    (flat over atoms unless given)."""
    prop = uniform_proposal(family.n_atoms) if proposal is None else proposal
    return [metropolis_level_kernel(family.level(i), prop) for i in range(family.L + 1)]


def export_kernel_csv(P: StochasticMatrix, csv_path, header_path) -> None:
    """Write a kernel as triplet CSV plus a JSON header with the state codec."""
    coo = sp.coo_matrix(P.matrix)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "value"])
        order = np.lexsort((coo.col, coo.row))
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            writer.writerow([int(r), int(c), repr(float(v))])
    labels = None
    if P.codec is not None and hasattr(P.codec, "labels"):
        labels = P.codec.labels()
    header = {
        "n_states": P.n_states,
        "stationary": [repr(float(x)) for x in P.stationary],
        "labels": labels,
    }
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
