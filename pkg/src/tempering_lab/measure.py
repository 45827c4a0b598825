"""Finite multimodal targets, tempering, and partition-level quantities.

Conventions used throughout the package:

* atoms are indexed ``0 .. n_atoms - 1`` and carry strictly positive weights
  under counting measure;
* modes (partition blocks) are labelled ``1 .. m``;
* temperature levels are indexed ``0 .. L``, level ``L`` is the coldest and
  always has inverse temperature exactly 1;
* a level-to-mode assignment is a vector in ``[m]^(L+1)``, encoded as a
  mixed-radix integer with level 0 as the most significant digit.

Tempering is computed in log space so extreme weights and small inverse
temperatures never overflow.  All quantities here (overlap, bottleneck
ratio, swap-acceptance marginals, the product stationary law) are exact
finite sums over atoms, not sampling estimates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .errors import BudgetExceededError

#: tolerance for normalization of a single level
LEVEL_NORM_TOL = 1e-12
#: generic tolerance for floating-point checks
CHECK_TOL = 1e-10
#: default cap on enumerated assignment spaces
DEFAULT_STATE_BUDGET = 10_000_000


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FiniteTarget:
    """An unnormalized multimodal density on a finite atom set.

    ``atom_weights[x]`` is the (strictly positive) density of atom ``x``
    under counting measure and ``partition_labels[x]`` is the mode in
    ``1..m`` that atom belongs to.  Every mode must own at least one atom.
    """

    atom_weights: np.ndarray
    partition_labels: np.ndarray
    m: int

    def __post_init__(self):
        weights = _frozen_array(self.atom_weights, dtype=float)
        labels = _frozen_array(self.partition_labels, dtype=int)
        object.__setattr__(self, "atom_weights", weights)
        object.__setattr__(self, "partition_labels", labels)
        if weights.ndim != 1 or labels.ndim != 1:
            raise ValueError("atom_weights and partition_labels must be 1-d")
        if len(weights) != len(labels) or len(weights) < 1:
            raise ValueError("atom_weights and partition_labels must have equal length >= 1")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("atom weights must be finite and strictly positive")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        present = set(labels.tolist())
        expected = set(range(1, self.m + 1))
        if not present <= expected:
            raise ValueError(f"partition labels must lie in 1..{self.m}, got {sorted(present)}")
        if present != expected:
            missing = sorted(expected - present)
            raise ValueError(f"every mode must contain at least one atom; missing {missing}")

    @classmethod
    def from_weights(cls, atom_weights, partition_labels) -> "FiniteTarget":
        """Build a target inferring ``m`` from the largest label."""
        labels = np.asarray(partition_labels, dtype=int)
        return cls(np.asarray(atom_weights, dtype=float), labels, int(labels.max()))

    @property
    def n_atoms(self) -> int:
        return len(self.atom_weights)

    def atoms_in_mode(self, k: int) -> np.ndarray:
        """Indices of the atoms in mode ``k`` (1-based label)."""
        if not 1 <= k <= self.m:
            raise ValueError(f"mode {k} out of range 1..{self.m}")
        return np.nonzero(self.partition_labels == k)[0]


@dataclass(frozen=True)
class TemperatureLadder:
    """Strictly increasing inverse temperatures ending exactly at 1."""

    betas: np.ndarray

    def __post_init__(self):
        betas = _frozen_array(self.betas, dtype=float)
        object.__setattr__(self, "betas", betas)
        if betas.ndim != 1 or len(betas) < 1:
            raise ValueError("ladder needs at least one inverse temperature")
        if np.any(np.diff(betas) <= 0):
            raise ValueError("inverse temperatures must be strictly increasing")
        if betas[-1] != 1.0:
            raise ValueError("the last inverse temperature must be exactly 1")

    @property
    def L(self) -> int:
        """Level count minus one."""
        return len(self.betas) - 1


@dataclass(frozen=True)
class TemperedFamily:
    """The normalized level distributions of a tempered target.

    ``levels`` is an ``(L+1, n_atoms)`` stack of probability vectors.  The
    usual way to obtain a family is :func:`temper`, which sets level ``i``
    proportional to ``target^beta_i``; building one directly from explicit
    rows is also allowed as long as each row is normalized and every mode
    carries positive mass at every level.
    """

    levels: np.ndarray
    target: FiniteTarget
    ladder: TemperatureLadder

    def __post_init__(self):
        levels = _frozen_array(self.levels, dtype=float)
        object.__setattr__(self, "levels", levels)
        n = self.target.n_atoms
        if levels.shape != (self.ladder.L + 1, n):
            raise ValueError(f"levels must have shape {(self.ladder.L + 1, n)}, got {levels.shape}")
        if np.any(levels < 0):
            raise ValueError("level densities must be nonnegative")
        err = np.abs(levels.sum(axis=1) - 1.0).max()
        if err > LEVEL_NORM_TOL:
            raise ValueError(f"levels must be normalized within {LEVEL_NORM_TOL}, residual {err:.3e}")
        mass = np.zeros((self.ladder.L + 1, self.target.m))
        for k in range(1, self.target.m + 1):
            mass[:, k - 1] = levels[:, self.target.atoms_in_mode(k)].sum(axis=1)
        if np.any(mass <= 0):
            raise ValueError("every mode must have positive mass at every level")
        mass.setflags(write=False)
        object.__setattr__(self, "_block_mass", mass)

    @property
    def L(self) -> int:
        return self.ladder.L

    @property
    def m(self) -> int:
        return self.target.m

    @property
    def n_atoms(self) -> int:
        return self.target.n_atoms

    def level(self, i: int) -> np.ndarray:
        """The probability vector of level ``i``."""
        if not 0 <= i <= self.L:
            raise ValueError(f"level {i} out of range 0..{self.L}")
        return self.levels[i]

    @property
    def block_mass(self) -> np.ndarray:
        """``(L+1, m)`` matrix of level masses per mode; ``[i, k-1]`` is mode ``k``."""
        return self._block_mass

    def mode_mass(self, i: int, k: int) -> float:
        """Mass of mode ``k`` at level ``i``."""
        return float(self._block_mass[i, k - 1])


def temper(target: FiniteTarget, ladder: TemperatureLadder) -> TemperedFamily:
    """Raise the target to each inverse temperature and normalize per level.

    Level ``i`` has atom density proportional to ``w^beta_i``; everything is
    computed as ``exp(beta * log w - logsumexp)`` so huge or tiny weights are
    safe.
    """
    logw = np.log(target.atom_weights)
    rows = np.empty((ladder.L + 1, target.n_atoms))
    for i, beta in enumerate(ladder.betas):
        x = beta * logw
        x -= x.max()
        p = np.exp(x)
        rows[i] = p / p.sum()
    return TemperedFamily(rows, target, ladder)


@dataclass(frozen=True)
class ProductAssignment:
    """A level-to-mode assignment: one mode label in ``1..m`` per level."""

    modes: tuple
    m: int

    def __post_init__(self):
        modes = tuple(int(k) for k in self.modes)
        object.__setattr__(self, "modes", modes)
        if len(modes) < 1:
            raise ValueError("assignment must cover at least one level")
        if any(not 1 <= k <= self.m for k in modes):
            raise ValueError(f"assignment entries must lie in 1..{self.m}")

    @property
    def L(self) -> int:
        return len(self.modes) - 1

    def with_level(self, i: int, k: int) -> "ProductAssignment":
        """The assignment with level ``i`` replaced by mode ``k``."""
        if not 0 <= i <= self.L:
            raise ValueError(f"level {i} out of range 0..{self.L}")
        modes = list(self.modes)
        modes[i] = k
        return ProductAssignment(tuple(modes), self.m)

    def transposed(self, i: int, j: int) -> "ProductAssignment":
        """The assignment with the contents of levels ``i`` and ``j`` exchanged."""
        modes = list(self.modes)
        modes[i], modes[j] = modes[j], modes[i]
        return ProductAssignment(tuple(modes), self.m)

    def hamming(self, other: "ProductAssignment") -> int:
        """Number of levels at which the two assignments differ."""
        if len(self.modes) != len(other.modes):
            raise ValueError("assignments must cover the same levels")
        return sum(a != b for a, b in zip(self.modes, other.modes))


@dataclass(frozen=True)
class AssignmentSpace:
    """Mixed-radix codec between assignments in ``[m]^n_levels`` and indices.

    Level 0 is the most significant digit, so the index of ``(k_0, ..., k_L)``
    is ``sum((k_i - 1) * m^(L - i))``.  The encoding is bit-exact and shared by
    every module that enumerates assignment spaces.
    """

    m: int
    n_levels: int

    def __post_init__(self):
        if self.m < 1 or self.n_levels < 1:
            raise ValueError("m and n_levels must be >= 1")

    @property
    def size(self) -> int:
        return self.m ** self.n_levels

    def index_of(self, modes: Sequence[int]) -> int:
        if len(modes) != self.n_levels:
            raise ValueError(f"assignment must have {self.n_levels} levels")
        idx = 0
        for k in modes:
            if not 1 <= k <= self.m:
                raise ValueError(f"mode {k} out of range 1..{self.m}")
            idx = idx * self.m + (k - 1)
        return idx

    def assignment_at(self, idx: int) -> tuple:
        if not 0 <= idx < self.size:
            raise ValueError(f"index {idx} out of range")
        digits = []
        for _ in range(self.n_levels):
            digits.append(idx % self.m + 1)
            idx //= self.m
        return tuple(reversed(digits))

    def __iter__(self) -> Iterator[tuple]:
        for idx in range(self.size):
            yield self.assignment_at(idx)

    def digit(self, indices: np.ndarray, level: int) -> np.ndarray:
        """Vectorized zero-based digit (mode minus one) at ``level``."""
        return (indices // self.m ** (self.n_levels - 1 - level)) % self.m

    def labels(self) -> list:
        """Human-readable labels, used when exporting kernels."""
        return [",".join(map(str, a)) for a in self]


def pi_bar(family: TemperedFamily, budget: int = DEFAULT_STATE_BUDGET) -> np.ndarray:
    """Product stationary law over assignments: ``prod_i pi_i(A_{lam_i})``.

    Returns a dense vector indexed by :class:`AssignmentSpace` of shape
    ``(m^(L+1),)``.  Raises :class:`BudgetExceededError` when the assignment
    space exceeds ``budget`` states.
    """
    space = AssignmentSpace(family.m, family.L + 1)
    if space.size > budget:
        raise BudgetExceededError(
            f"assignment space has {space.size} states, budget is {budget}"
        )
    out = family.block_mass[0].copy()
    for i in range(1, family.L + 1):
        out = (out[:, None] * family.block_mass[i][None, :]).ravel()
    return out


def overlap_phi(family: TemperedFamily) -> float:
    """Minimum overlapping volume between adjacent levels, per mode.

    For each ordered adjacent pair ``(i, j)`` with ``|i - j| = 1`` and each
    mode ``k``, the candidate value is

        sum_{x in A_k} min(pi_i(x), pi_j(x)) / pi_i(A_k),

    and the result is the minimum over all such triples; both orderings of
    every adjacent pair enter.  The sum runs over the block ``A_k`` (not the
    whole space), which keeps the value in ``(0, 1]`` and is what makes the
    stationary swap-acceptance bound ``>= phi^2`` hold.
    """
    if family.L < 1:
        raise ValueError("overlap needs at least two levels")
    best = np.inf
    m = family.m
    blocks = [family.target.atoms_in_mode(k) for k in range(1, m + 1)]
    for i in range(1, family.L + 1):
        overlap = np.minimum(family.levels[i - 1], family.levels[i])
        for k in range(m):
            block_overlap = float(overlap[blocks[k]].sum())
            for a in (i - 1, i):
                best = min(best, block_overlap / float(family.block_mass[a, k]))
    return best


def bottleneck_B(family: TemperedFamily) -> float:
    """Worst-mode product of adjacent-level mass ratios, in ``(0, 1]``.

    ``min_k prod_{i=1..L} min(1, pi_{i-1}(A_k) / pi_i(A_k))``; an empty
    product (``L = 0``) is 1.
    """
    if family.L == 0:
        return 1.0
    mass = family.block_mass
    ratios = np.minimum(1.0, mass[:-1] / mass[1:])
    return float(ratios.prod(axis=0).min())


def swap_acceptance_marginal(family: TemperedFamily, i: int, k1: int, k2: int) -> float:
    """Stationary probability of accepting a swap between adjacent levels.

    Conditional on the level-``i-1`` sample lying in mode ``k1`` and the
    level-``i`` sample in mode ``k2``, both at stationarity, this is the
    expected Metropolis swap acceptance:

        sum_{x in A_k1, y in A_k2} min(pi_{i-1}(x) pi_i(y), pi_{i-1}(y) pi_i(x))
            / (pi_{i-1}(A_k1) * pi_i(A_k2)).

    Always at least ``overlap_phi(family)**2`` (asserted).
    """
    if not 1 <= i <= family.L:
        raise ValueError(f"swap level {i} out of range 1..{family.L}")
    if not (1 <= k1 <= family.m and 1 <= k2 <= family.m):
        raise ValueError(f"modes must lie in 1..{family.m}")
    idx1 = family.target.atoms_in_mode(k1)
    idx2 = family.target.atoms_in_mode(k2)
    hot_1, hot_2 = family.levels[i - 1][idx1], family.levels[i - 1][idx2]
    cold_1, cold_2 = family.levels[i][idx1], family.levels[i][idx2]
    num = np.minimum(np.outer(hot_1, cold_2), np.outer(cold_1, hot_2)).sum()
    value = float(num / (family.mode_mass(i - 1, k1) * family.mode_mass(i, k2)))
    if family.L >= 1:
        phi = overlap_phi(family)
        assert value >= phi * phi - 1e-12, (
            f"swap acceptance {value} fell below phi^2 = {phi * phi}"
        )
    return value


def random_family(m: int, L: int, n_atoms: int | None = None, seed: int = 0) -> TemperedFamily:
    """A reproducible random family, handy for tests and CLI demos.

    Weights are lognormal, the first ``m`` atoms pin one atom per mode, the
    remaining labels are uniform, and the ladder is sorted uniform on
    ``[0.15, 1)`` with the final level pinned at 1.
    """
    rng = np.random.default_rng(seed)
    n = n_atoms if n_atoms is not None else 2 * m
    if n < m:
        raise ValueError("need at least one atom per mode")
    weights = rng.lognormal(mean=0.0, sigma=1.0, size=n)
    labels = np.concatenate([np.arange(1, m + 1), rng.integers(1, m + 1, size=n - m)])
    if L > 0:
        betas = np.sort(rng.uniform(0.15, 0.95, size=L))
        betas = np.concatenate([betas, [1.0]])
    else:
        betas = np.array([1.0])
    target = FiniteTarget(weights, labels, m)
    return temper(target, TemperatureLadder(betas))


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

def _parse_weight(value) -> float:
    """Accept a number or a decimal string; strings round exactly once."""
    if isinstance(value, str):
        return float(Fraction(Decimal(value)))
    return float(value)


def target_from_json(data: dict) -> tuple[FiniteTarget, TemperatureLadder]:
    """Parse the ``{"atoms": [{"weight", "mode"}, ...], "betas": [...]}`` format."""
    try:
        atoms = data["atoms"]
        betas = data["betas"]
    except (TypeError, KeyError) as exc:
        raise ValueError("target JSON needs 'atoms' and 'betas' keys") from exc
    if not atoms:
        raise ValueError("target JSON has no atoms")
    weights = [_parse_weight(a["weight"]) for a in atoms]
    labels = [int(a["mode"]) for a in atoms]
    target = FiniteTarget.from_weights(weights, labels)
    ladder = TemperatureLadder(np.array([_parse_weight(b) for b in betas]))
    return target, ladder


def target_to_json(target: FiniteTarget, ladder: TemperatureLadder) -> dict:
    """Inverse of :func:`target_from_json`; weights become repr strings."""
    return {
        "atoms": [
            {"weight": repr(float(w)), "mode": int(k)}
            for w, k in zip(target.atom_weights, target.partition_labels)
        ],
        "betas": [float(b) for b in ladder.betas],
    }


def load_family(path) -> TemperedFamily:
    """Read a target JSON file and temper it."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    target, ladder = target_from_json(data)
    return temper(target, ladder)
