"""Shared random-instance generators for the test suite."""

import numpy as np

from chain_perturb import FiniteKernel


def random_dist(rng, n):
    w = rng.gamma(1.0, size=n)
    return w / w.sum()


def random_kernel(rng, n):
    rows = rng.gamma(1.0, size=(n, n))
    return FiniteKernel(rows / rows.sum(axis=1, keepdims=True))


def random_pair(rng, n, t):
    """Base kernel plus a mixture perturbation: row TV at most t."""
    P = random_kernel(rng, n)
    Q = random_kernel(rng, n)
    P_eps = FiniteKernel((1.0 - t) * P.rows + t * Q.rows)
    return P_eps, P


def power_iteration_mu(P, iters=20000):
    n = len(P)
    mu = np.full(n, 1.0 / n)
    for _ in range(iters):
        mu = mu @ P.rows
    return mu
