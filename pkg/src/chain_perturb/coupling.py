"""Minimum-overlap coupling of two finite kernels and its dominating two-state chain.

Given the current pair of states, the two outgoing rows are split by their
pointwise minimum into a shared component carrying mass ``rho = 1 - tv`` and
two disjoint leftover parts.  One uniform decides whether the pair moves
together (inside the shared component) or independently (one leftover part
each); the same uniform drives a two-state chain whose state-1 occupation
dominates the disagreement indicator pathwise, because ``rho >= 1 - epsilon``
on the diagonal and ``rho >= alpha`` off it.

RNG contract: trajectory ``i`` under master seed ``s`` owns the substream
``SeedSequence(entropy=s, spawn_key=(i,))`` and consumes exactly three
uniforms per step (plus one extra triple up front when the initial states are
sampled from distributions), so batches are reproducible bit-for-bit and safe
to generate in parallel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .bounds import decay_power
from .errors import DimensionMismatchError, InvalidRegimeError
from .kernels import (
    ProbDist,
    StateFunction,
    as_dist,
    as_kernel,
    cross_doeblin_constant,
    local_epsilon,
)

__all__ = [
    "CouplingRecipe",
    "BoundingChain",
    "CoupledTrajectory",
    "CoupledBatch",
    "build_recipe",
    "product_kernel_row",
    "coupled_step",
    "simulate_coupled",
    "simulate_coupled_batch",
    "iter_coupled_batches",
    "bounding_chain_exact_occupation",
    "two_state_poisson",
    "write_batch_summary",
]


@dataclass(frozen=True)
class CouplingRecipe:
    """Minimum-overlap split of one pair of rows.

    ``rho`` is the shared mass; ``q_dist`` the normalized pointwise minimum;
    ``r_dist`` / ``r_tilde_dist`` the normalized positive parts of
    ``row_eps - row`` and ``row - row_eps`` (disjoint supports).  Degenerate
    cases keep only the parts that can be sampled: ``fully_coupled`` has no
    leftover parts, ``fully_decoupled`` has no shared part.
    """

    rho: float
    q_dist: ProbDist | None
    r_dist: ProbDist | None
    r_tilde_dist: ProbDist | None
    degenerate: str  # "none" | "fully_coupled" | "fully_decoupled"


@dataclass(frozen=True)
class BoundingChain:
    """Two-state chain [[1-epsilon, epsilon], [alpha, 1-alpha]] dominating the disagreement indicator."""

    alpha: float
    epsilon: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("alpha and epsilon must lie in [0, 1]")
        if self.epsilon > 1.0 - self.alpha:
            raise InvalidRegimeError(
                f"epsilon={self.epsilon!r} > 1 - alpha={1.0 - self.alpha!r}: no contraction"
            )

    @property
    def transition(self) -> np.ndarray:
        return np.array([[1.0 - self.epsilon, self.epsilon], [self.alpha, 1.0 - self.alpha]])

    @property
    def stationary(self) -> np.ndarray:
        s = self.alpha + self.epsilon
        if s <= 0.0:
            raise InvalidRegimeError("alpha + epsilon = 0: stationary measure undefined")
        return np.array([self.alpha / s, self.epsilon / s])


@dataclass
class CoupledTrajectory:
    """One coupled path: base chain, approximating chain, disagreement and dominating indicators."""

    x_path: np.ndarray       # base chain, law P
    x_eps_path: np.ndarray   # approximating chain, law P_eps
    z_path: np.ndarray       # 1 where the two paths differ
    y_path: np.ndarray       # dominating two-state chain, driven by the same uniforms
    seed: int

    @property
    def length(self) -> int:
        return int(self.x_path.size)

    def disagreement_fraction(self, horizon=None) -> float:
        """Fraction of steps k < horizon (default: all but the last state) with disagreement."""
        h = self.length - 1 if horizon is None else int(horizon)
        return float(self.z_path[:h].mean())

    def first_decoupling_step(self) -> int:
        """Index of the first disagreement, or -1 if the paths always agree."""
        if not self.z_path.any():
            return -1
        return int(self.z_path.argmax())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "x", "x_eps", "z", "y"])
            for k in range(self.length):
                writer.writerow([k, int(self.x_path[k]), int(self.x_eps_path[k]),
                                 int(self.z_path[k]), int(self.y_path[k])])


@dataclass
class CoupledBatch:
    """Stacked coupled trajectories; row i is trajectory ``first_index + i``."""

    x_eps: np.ndarray  # (n_traj, n+1)
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    first_index: int
    seed: int

    @property
    def n_traj(self) -> int:
        return self.x.shape[0]

    @property
    def length(self) -> int:
        return self.x.shape[1]


def _row_decomposition(p, q):
    """Pointwise-minimum split of two probability vectors: (rho, min, pos, neg)."""
    m = np.minimum(p, q)
    pos = np.clip(p - q, 0.0, None)
    neg = np.clip(q - p, 0.0, None)
    return float(m.sum()), m, pos, neg


def build_recipe(P_eps, P, xi1, xi2) -> CouplingRecipe:
    """Minimum-overlap recipe for the state pair ``(xi1, xi2)``.

    ``xi1`` indexes the row of the approximating kernel, ``xi2`` the row of
    the base kernel.  The invariants ``rho = 1 - tv`` and the exact marginal
    reconstruction ``rho Q + (1-rho) R = row`` hold at machine precision.
    """
    A = as_kernel(P_eps)
    B = as_kernel(P)
    if len(A) != len(B):
        raise DimensionMismatchError(f"kernels live on {len(A)} vs {len(B)} states")
    p = A.rows[xi1]
    q = B.rows[xi2]
    rho, m, pos, neg = _row_decomposition(p, q)
    if pos.sum() == 0.0 and neg.sum() == 0.0:
        return CouplingRecipe(1.0, ProbDist(p), None, None, "fully_coupled")
    if rho == 0.0:
        return CouplingRecipe(0.0, None, ProbDist(p), ProbDist(q), "fully_decoupled")
    return CouplingRecipe(
        rho,
        ProbDist(m / rho),
        ProbDist(pos / pos.sum()),
        ProbDist(neg / neg.sum()),
        "none",
    )


def product_kernel_row(P_eps, P, xi) -> ProbDist:
    """Explicit joint one-step law on state pairs out of the pair ``xi``.

    Returns a distribution over ``n*n`` outcomes, pair ``(i, j)`` at flat
    index ``i * n + j`` where ``i`` is the next state of the approximating
    chain and ``j`` the next state of the base chain.  The two marginals
    reproduce the corresponding kernel rows exactly, and the diagonal carries
    mass ``rho`` (the leftover parts have disjoint supports).
    """
    rec = build_recipe(P_eps, P, xi[0], xi[1])
    n = len(as_kernel(P))
    joint = np.zeros((n, n))
    if rec.q_dist is not None:
        joint[np.diag_indices(n)] += rec.rho * rec.q_dist.weights
    if rec.r_dist is not None:
        joint += (1.0 - rec.rho) * np.outer(rec.r_dist.weights, rec.r_tilde_dist.weights)
    return ProbDist(joint.ravel())


def _inverse_cdf(weights, u):
    # Half-open convention [F(x-), F(x)): state x is selected for u in that interval.
    cdf = np.cumsum(weights)
    return min(int(np.searchsorted(cdf, u, side="right")), weights.size - 1)


def coupled_step(recipe: CouplingRecipe, u_couple, u1, u2):
    """One joint move from a recipe, driven by three uniforms in [0, 1).

    Returns ``(next_eps, next_base)``: a common state drawn from the shared
    component when ``u_couple < rho``, otherwise independent draws from the
    two leftover parts.  The output law equals :func:`product_kernel_row`.
    """
    if recipe.degenerate == "fully_coupled":
        nxt = _inverse_cdf(recipe.q_dist.weights, u1)
        return nxt, nxt
    if recipe.degenerate == "fully_decoupled":
        return (_inverse_cdf(recipe.r_dist.weights, u1),
                _inverse_cdf(recipe.r_tilde_dist.weights, u2))
    if u_couple < recipe.rho:
        nxt = _inverse_cdf(recipe.q_dist.weights, u1)
        return nxt, nxt
    return (_inverse_cdf(recipe.r_dist.weights, u1),
            _inverse_cdf(recipe.r_tilde_dist.weights, u2))


class _PairTables:
    """Flattened per-pair CDF tables for the vectorized simulator."""

    __slots__ = ("rho", "q_cdf", "r_cdf", "rt_cdf", "n_states")

    def __init__(self, rows_eps, rows_base):
        S = rows_eps.shape[0]
        a = rows_eps[:, None, :]
        b = rows_base[None, :, :]
        m = np.minimum(a, b).reshape(-1, S)
        pos = np.clip(a - b, 0.0, None).reshape(-1, S)
        neg = np.clip(b - a, 0.0, None).reshape(-1, S)
        self.n_states = S
        self.rho = m.sum(axis=1)
        self.q_cdf = np.cumsum(_safe_normalize(m), axis=1)
        self.r_cdf = np.cumsum(_safe_normalize(pos), axis=1)
        self.rt_cdf = np.cumsum(_safe_normalize(neg), axis=1)


def _safe_normalize(rows):
    # Zero-mass rows are never sampled; fill them with uniform so cumsum stays valid.
    s = rows.sum(axis=1, keepdims=True)
    out = np.full_like(rows, 1.0 / rows.shape[1])
    np.divide(rows, s, out=out, where=s > 0.0)
    return out


def _pick(cdf_rows, u):
    idx = (cdf_rows <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def _as_initial(value, n_states):
    """Normalize an initial condition to ('state', int) or ('dist', weights)."""
    if isinstance(value, (int, np.integer)):
        v = int(value)
        if not 0 <= v < n_states:
            raise ValueError(f"initial state {v} outside 0..{n_states - 1}")
        return "state", v
    w = as_dist(value).weights
    if w.size != n_states:
        raise DimensionMismatchError(f"initial law on {w.size} states, kernel on {n_states}")
    return "dist", w


def iter_coupled_batches(P_eps, P, x0_eps, x0, n, n_traj, seed,
                         alpha=None, epsilon=None, batch_size=None):
    """Yield :class:`CoupledBatch` chunks of ``n_traj`` coupled trajectories.

    The closeness constants are recomputed exactly from the kernel pair unless
    explicitly overridden; the construction requires ``epsilon < 1 - alpha``
    (checked once).  Initial conditions may be states or distributions; with
    distributions the initial pair is drawn from the maximal coupling of the
    two laws, so the initial disagreement probability equals their TV
    distance.
    """
    A = as_kernel(P_eps)
    B = as_kernel(P)
    if len(A) != len(B):
        raise DimensionMismatchError(f"kernels live on {len(A)} vs {len(B)} states")
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    if n_traj < 1:
        raise ValueError(f"n_traj must be a positive integer, got {n_traj!r}")
    eps = local_epsilon(A, B) if epsilon is None else float(epsilon)
    alp = cross_doeblin_constant(A, B) if alpha is None else float(alpha)
    if eps > 1.0 - alp:
        raise InvalidRegimeError(
            f"epsilon={eps:g} > 1 - alpha={1.0 - alp:g}: dominating chain unavailable"
        )
    S = len(A)
    kind_e, init_e = _as_initial(x0_eps, S)
    kind_b, init_b = _as_initial(x0, S)
    sample_init = kind_e == "dist" or kind_b == "dist"
    if sample_init:
        we = init_e if kind_e == "dist" else np.eye(S)[init_e]
        wb = init_b if kind_b == "dist" else np.eye(S)[init_b]
        rho0, m0, pos0, neg0 = _row_decomposition(we, wb)
        q0 = np.cumsum(_safe_normalize(m0[None, :]), axis=1)[0]
        r0 = np.cumsum(_safe_normalize(pos0[None, :]), axis=1)[0]
        rt0 = np.cumsum(_safe_normalize(neg0[None, :]), axis=1)[0]
    tables = _PairTables(A.rows, B.rows)
    steps = n + (1 if sample_init else 0)
    if batch_size is None:
        batch_size = max(1, min(int(n_traj), 1_500_000 // max(steps, 1)))
    for start in range(0, int(n_traj), batch_size):
        count = min(batch_size, int(n_traj) - start)
        U = np.empty((count, steps, 3))
        for j in range(count):
            ss = np.random.SeedSequence(entropy=seed, spawn_key=(start + j,))
            U[j] = np.random.default_rng(ss).random((steps, 3))
        xe = np.empty((count, n + 1), dtype=np.int32)
        xb = np.empty((count, n + 1), dtype=np.int32)
        offset = 0
        if sample_init:
            u0, u1, u2 = U[:, 0, 0], U[:, 0, 1], U[:, 0, 2]
            coupled = u0 < rho0
            common = _pick(np.broadcast_to(q0, (count, S)), u1)
            left = _pick(np.broadcast_to(r0, (count, S)), u1)
            right = _pick(np.broadcast_to(rt0, (count, S)), u2)
            xe[:, 0] = np.where(coupled, common, left)
            xb[:, 0] = np.where(coupled, common, right)
            offset = 1
        else:
            xe[:, 0] = init_e
            xb[:, 0] = init_b
        y = np.empty((count, n + 1), dtype=np.int8)
        y[:, 0] = (xe[:, 0] != xb[:, 0])
        cur_e = xe[:, 0].copy()
        cur_b = xb[:, 0].copy()
        cur_y = y[:, 0].astype(np.int8)
        for k in range(n):
            u0 = U[:, offset + k, 0]
            u1 = U[:, offset + k, 1]
            u2 = U[:, offset + k, 2]
            pair = cur_e * S + cur_b
            coupled = u0 < tables.rho[pair]
            common = _pick(tables.q_cdf[pair], u1)
            left = _pick(tables.r_cdf[pair], u1)
            right = _pick(tables.rt_cdf[pair], u2)
            cur_e = np.where(coupled, common, left).astype(np.int32)
            cur_b = np.where(coupled, common, right).astype(np.int32)
            # Same uniform drives the dominating chain; rho >= 1-eps on the
            # diagonal and rho >= alpha elsewhere make Z <= Y pathwise.
            stay = np.where(cur_y == 0, u0 < 1.0 - eps, u0 < alp)
            cur_y = np.where(stay, 0, 1).astype(np.int8)
            xe[:, k + 1] = cur_e
            xb[:, k + 1] = cur_b
            y[:, k + 1] = cur_y
        z = (xe != xb).astype(np.int8)
        yield CoupledBatch(x_eps=xe, x=xb, z=z, y=y, first_index=start, seed=seed)


def simulate_coupled_batch(P_eps, P, x0_eps, x0, n, n_traj, seed,
                           alpha=None, epsilon=None, batch_size=None) -> CoupledBatch:
    """All ``n_traj`` coupled trajectories stacked into one :class:`CoupledBatch`."""
    chunks = list(iter_coupled_batches(P_eps, P, x0_eps, x0, n, n_traj, seed,
                                       alpha=alpha, epsilon=epsilon, batch_size=batch_size))
    if len(chunks) == 1:
        return chunks[0]
    return CoupledBatch(
        x_eps=np.concatenate([c.x_eps for c in chunks]),
        x=np.concatenate([c.x for c in chunks]),
        z=np.concatenate([c.z for c in chunks]),
        y=np.concatenate([c.y for c in chunks]),
        first_index=0,
        seed=seed,
    )


def simulate_coupled(P_eps, P, x0_eps, x0, n, seed, alpha=None, epsilon=None) -> CoupledTrajectory:
    """One coupled trajectory of length ``n + 1`` (substream 0 under ``seed``)."""
    batch = simulate_coupled_batch(P_eps, P, x0_eps, x0, n, 1, seed,
                                   alpha=alpha, epsilon=epsilon)
    return CoupledTrajectory(
        x_path=batch.x[0],
        x_eps_path=batch.x_eps[0],
        z_path=batch.z[0],
        y_path=batch.y[0],
        seed=seed,
    )


def write_batch_summary(batch: CoupledBatch, path, horizon=None):
    """Per-trajectory summary CSV: seed (substream index), n, disagreement fraction, first decoupling step."""
    h = batch.length - 1 if horizon is None else int(horizon)
    frac = batch.z[:, :h].mean(axis=1)
    any_dec = batch.z.any(axis=1)
    first = np.where(any_dec, batch.z.argmax(axis=1), -1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "n", "disagreement_fraction", "first_decoupling_step"])
        for i in range(batch.n_traj):
            writer.writerow([batch.first_index + i, h,
                             format(frac[i], ".17g"), int(first[i])])


def bounding_chain_exact_occupation(bc: BoundingChain, y0, n) -> float:
    """Exact expected fraction of steps ``k < n`` the dominating chain spends in state 1.

    ``y0`` may be a binary state or a probability ``P(Y_0 = 1)``.  The closed
    form follows from the right eigenvector ``(-epsilon/alpha, 1)`` with
    eigenvalue ``1 - alpha - epsilon``:

    ``e/s + (1 - (1-s)^n) / (n s^2) * (alpha p1 - epsilon (1 - p1))``

    with ``s = alpha + epsilon`` and ``p1 = P(Y_0 = 1)``.
    """
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    p1 = float(y0)
    if not 0.0 <= p1 <= 1.0:
        raise ValueError(f"y0 must be a binary state or probability, got {y0!r}")
    s = bc.alpha + bc.epsilon
    if s <= 0.0:
        raise InvalidRegimeError("alpha + epsilon = 0: occupation ill-defined")
    shrink = (1.0 - decay_power(1.0 - s, n)) / (n * s * s)
    return bc.epsilon / s + shrink * (bc.alpha * p1 - bc.epsilon * (1.0 - p1))


def two_state_poisson(bc: BoundingChain) -> StateFunction:
    """Poisson solution for the dominating chain's centered occupation observable.

    ``psi = (-epsilon, alpha) / (alpha + epsilon)^2`` solves
    ``(T - I) psi = -phi_tilde`` with ``phi_tilde = (-epsilon, alpha)/(alpha+epsilon)``.
    """
    s = bc.alpha + bc.epsilon
    if s <= 0.0:
        raise InvalidRegimeError("alpha + epsilon = 0: Poisson solution undefined")
    return StateFunction([-bc.epsilon / (s * s), bc.alpha / (s * s)])
