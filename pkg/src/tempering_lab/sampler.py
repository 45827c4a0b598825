"""Monte Carlo execution of the tempering sweep with trace diagnostics.

One iteration does exactly what the sampling loop prescribes: every level
proposes from its symmetric proposal and Metropolis-accepts, then the
adjacent pairs ``(0,1), ..., (L-1,L)`` are swept in order, each swap
proposed and accepted with the tempering ratio against the *current*
values.  Note the analysis kernels in :mod:`tempering_lab.kernels` use
half-lazy single-move mixtures instead of this sequential sweep; both
compositions are exposed (:func:`sweep_kernel` builds the exact one-sweep
transition matrix of the simulated chain, ``kernels.pt_composition`` the
mixture-component product).

Randomness comes from counter-based Philox streams.  The seed-to-stream
mapping is fixed and documented: stream ``j`` is
``Generator(Philox(SeedSequence(entropy=seed, spawn_key=(j,))))`` with
``j = 0..L`` driving the level-``j`` proposal and acceptance draws (two
uniforms per iteration, proposal first), ``j = L+1`` the swap sweep
(``L`` uniforms per iteration, pair order), and ``j = L+2`` the uniform
initialization of the ``L+1`` starting atoms.  Identical seeds therefore
reproduce traces bit for bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .kernels import ProductSpace, StochasticMatrix, product_stationary
from .measure import TemperedFamily


@dataclass
class PTTrace:
    """Recorded run: per-iteration atoms and per-pair swap counters."""

    samples: np.ndarray  # (N, L+1) atom indices after each full sweep
    swap_attempts: np.ndarray  # (L,) proposals per adjacent pair
    swap_accepts: np.ndarray  # (L,) acceptances per adjacent pair
    seed: int
    N: int

    @property
    def n_levels(self) -> int:
        return self.samples.shape[1]


def _stream(seed: int, j: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(j,))))


def _check_proposals(family: TemperedFamily, proposals) -> list:
    n = family.n_atoms
    mats = []
    for i, prop in enumerate(proposals):
        p = np.asarray(prop, dtype=float)
        if p.shape != (n, n):
            raise ValueError(f"proposal {i} must be {n}x{n}")
        if float(np.abs(p - p.T).max()) > 1e-12:
            raise ValueError(f"proposal {i} must be symmetric")
        if float(np.abs(p.sum(axis=1) - 1.0).max()) > 1e-10:
            raise ValueError(f"proposal {i} rows must sum to 1")
        mats.append(p)
    if len(mats) != family.L + 1:
        raise ValueError(f"need {family.L + 1} proposals, got {len(mats)}")
    return mats


def run_parallel_tempering(
    family: TemperedFamily, proposals, N: int, seed: int
) -> PTTrace:
    """Run ``N`` sweeps of per-level updates followed by the swap sweep.

    ``proposals`` is one symmetric proposal matrix per level.  The start
    state is uniform over atoms, drawn from the initialization stream.
    Deterministic given ``seed``.
    """
    if N < 1:
        raise ValueError("need at least one iteration")
    mats = _check_proposals(family, proposals)
    L = family.L
    n = family.n_atoms
    levels = family.levels
    cdfs = [np.cumsum(p, axis=1) for p in mats]

    upd_u = [_stream(seed, i).random((N, 2)) for i in range(L + 1)]
    swap_u = _stream(seed, L + 1).random((N, L)) if L > 0 else np.zeros((N, 0))
    state = _stream(seed, L + 2).integers(0, n, size=L + 1)

    samples = np.empty((N, L + 1), dtype=np.int64)
    attempts = np.zeros(L, dtype=np.int64)
    accepts = np.zeros(L, dtype=np.int64)

    for it in range(N):
        for i in range(L + 1):
            x = state[i]
            u_prop, u_acc = upd_u[i][it]
            y = int(np.searchsorted(cdfs[i][x], u_prop, side="right"))
            y = min(y, n - 1)
            if levels[i][y] >= levels[i][x] or u_acc * levels[i][x] < levels[i][y]:
                state[i] = y
        for i in range(1, L + 1):
            attempts[i - 1] += 1
            a, b = state[i - 1], state[i]
            num = levels[i - 1][b] * levels[i][a]
            den = levels[i][b] * levels[i - 1][a]
            if num >= den or swap_u[it, i - 1] * den < num:
                state[i - 1], state[i] = b, a
                accepts[i - 1] += 1
        samples[it] = state
    return PTTrace(samples, attempts, accepts, seed, N)


def swap_stats(trace: PTTrace) -> list:
    """Acceptance rate per adjacent pair; None where nothing was attempted."""
    out = []
    for att, acc in zip(trace.swap_attempts, trace.swap_accepts):
        out.append(float(acc) / float(att) if att > 0 else None)
    return out


def empirical_tv(
    trace: PTTrace, reference: np.ndarray, burn_in: int, level: int | None = None
) -> float:
    """Total variation between the post-burn-in occupancy and a reference.

    Diagnostics default to the coldest level; pass ``level`` to inspect any
    other one.
    """
    if burn_in >= trace.N:
        raise ValueError("burn-in must leave at least one sample")
    if burn_in < 0:
        raise ValueError("burn-in must be nonnegative")
    lvl = trace.n_levels - 1 if level is None else level
    if not 0 <= lvl < trace.n_levels:
        raise ValueError(f"level {lvl} out of range")
    ref = np.asarray(reference, dtype=float)
    counts = np.bincount(trace.samples[burn_in:, lvl], minlength=len(ref))
    if len(counts) > len(ref):
        raise ValueError("reference is shorter than the atom range in the trace")
    freq = counts / counts.sum()
    return float(0.5 * np.abs(freq - ref).sum())


def mode_occupancy(trace: PTTrace, family: TemperedFamily, burn_in: int = 0,
                   level: int | None = None) -> np.ndarray:
    """Fraction of post-burn-in samples per mode at one level (default coldest)."""
    lvl = trace.n_levels - 1 if level is None else level
    atoms = trace.samples[burn_in:, lvl]
    modes = family.target.partition_labels[atoms]
    counts = np.bincount(modes, minlength=family.m + 1)[1:]
    return counts / counts.sum()


def stationary_swap_acceptance(family: TemperedFamily, i: int) -> float:
    """Exact stationary acceptance probability of the swap at pair ``(i-1, i)``.

    The full-space double sum
    ``sum_{x,y} min(pi_{i-1}(x) pi_i(y), pi_{i-1}(y) pi_i(x))``; the sweep
    preserves the product law, so long-run empirical swap rates converge to
    this value.
    """
    if not 1 <= i <= family.L:
        raise ValueError(f"pair {i} out of range 1..{family.L}")
    hot, cold = family.levels[i - 1], family.levels[i]
    return float(np.minimum(np.outer(hot, cold), np.outer(cold, hot)).sum())


def sweep_kernel(family: TemperedFamily, proposals) -> StochasticMatrix:
    """Exact one-sweep transition matrix of the simulated chain.

    The product, over levels, of the per-level Metropolis update matrices
    (no extra holding) followed by the per-pair swap matrices in sweep
    order.  Preserves the product law but is not reversible in general.
    """
    mats = _check_proposals(family, proposals)
    n, L = family.n_atoms, family.L
    space = ProductSpace(n, L + 1)
    size = space.size
    total = np.eye(size)
    for i in range(L + 1):
        pi_i = family.levels[i]
        accept = np.minimum(1.0, pi_i[None, :] / pi_i[:, None])
        step = mats[i] * accept
        np.fill_diagonal(step, 0.0)
        step[np.diag_indices(n)] = 1.0 - step.sum(axis=1)
        lifted = np.kron(
            np.eye(n**i), np.kron(step, np.eye(n ** (L - i)))
        )
        total = total @ lifted
    states = np.arange(size)
    for i in range(1, L + 1):
        a = space.digit(states, i - 1)
        b = space.digit(states, i)
        hot, cold = family.levels[i - 1], family.levels[i]
        alpha = np.minimum(1.0, (hot[b] * cold[a]) / (hot[a] * cold[b]))
        stride = n ** (L - i + 1) - n ** (L - i)
        swap = np.zeros((size, size))
        swap[states, states + (b - a) * stride] += alpha
        swap[states, states] += 1.0 - alpha
        total = total @ swap
    return StochasticMatrix(
        total, product_stationary(family), space, require_reversible=False
    )


def sweep_decay_rate(sweep: StochasticMatrix) -> float:
    """Asymptotic per-sweep decay rate ``-log |lambda_2|`` of a sweep kernel.

    Works for non-reversible kernels via the full complex spectrum; the
    total-variation distance to stationarity decays at least this fast per
    sweep, up to polynomial factors.
    """
    eigs = np.sort(np.abs(np.linalg.eigvals(sweep.as_dense())))
    lam2 = float(eigs[-2])
    return float(np.inf) if lam2 <= 0 else -float(np.log(lam2))


def exact_product_sample(family: TemperedFamily, count: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF samples from the product law, shape ``(count, L+1)``."""
    out = np.empty((count, family.L + 1), dtype=np.int64)
    for i in range(family.L + 1):
        cdf = np.cumsum(family.levels[i])
        out[:, i] = np.searchsorted(cdf, rng.random(count), side="right")
    np.clip(out, 0, family.n_atoms - 1, out=out)
    return out


def sweep_replicas(
    family: TemperedFamily, proposals, states: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Apply one full sweep to many replicas at once (vectorized).

    ``states`` is ``(R, L+1)``; returns the updated array (a new one).  Used
    by stationarity and decay diagnostics where per-replica streams are
    irrelevant.
    """
    mats = _check_proposals(family, proposals)
    states = np.array(states, dtype=np.int64)
    R = states.shape[0]
    n, L = family.n_atoms, family.L
    cdfs = [np.cumsum(p, axis=1) for p in mats]
    for i in range(L + 1):
        x = states[:, i]
        u = rng.random(R)
        rows = cdfs[i][x]
        y = np.minimum((rows < u[:, None]).sum(axis=1), n - 1)
        ratio = family.levels[i][y] / family.levels[i][x]
        keep = rng.random(R) < np.minimum(1.0, ratio)
        states[:, i] = np.where(keep, y, x)
    for i in range(1, L + 1):
        a, b = states[:, i - 1], states[:, i]
        hot, cold = family.levels[i - 1], family.levels[i]
        alpha = np.minimum(1.0, (hot[b] * cold[a]) / (hot[a] * cold[b]))
        do = rng.random(R) < alpha
        states[do, i - 1], states[do, i] = b[do], a[do]
    return states


def write_trace_csv(trace: PTTrace, path) -> None:
    """Rows ``iteration, level, atom`` for every recorded sample."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "level", "atom"])
        for it in range(trace.N):
            for lvl in range(trace.n_levels):
                writer.writerow([it, lvl, int(trace.samples[it, lvl])])


def trace_summary(trace: PTTrace, family: TemperedFamily | None = None,
                  burn_in: int = 0) -> dict:
    """JSON-ready run summary: swap rates plus occupancy when a family is given."""
    out = {
        "N": trace.N,
        "seed": trace.seed,
        "n_levels": trace.n_levels,
        "swap_attempts": trace.swap_attempts.tolist(),
        "swap_accepts": trace.swap_accepts.tolist(),
        "swap_rates": swap_stats(trace),
    }
    if family is not None:
        out["mode_occupancy_cold"] = mode_occupancy(trace, family, burn_in).tolist()
        out["exact_mode_mass_cold"] = family.block_mass[family.L].tolist()
    return out


def write_trace_summary(trace: PTTrace, path, family: TemperedFamily | None = None,
                        burn_in: int = 0) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace_summary(trace, family, burn_in), fh, indent=2)
