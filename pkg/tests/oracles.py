"""Independent reference computations used by the tests.

Nothing here calls into the solver or the convolution code; each oracle
recomputes its quantity from first principles (step-by-step recursion,
Monte-Carlo sampling, dense linear algebra, exhaustive enumeration).
"""
import itertools
import math

import numpy as np


def one_step(v, i, R, C, dt):
    """Single sub-interval of the RC law, written out directly."""
    x = dt / (R * C)
    return math.exp(-x) * (v + R * (1 - math.exp(-x)) * i * math.exp(x))


def stepwise_voltage(v0, currents, R, C, dt):
    v = v0
    for i in currents:
        v = one_step(v, i, R, C, dt)
    return v


def mc_final_voltages(v0, n, R, C, dt, lo, hi, draws, seed):
    """Final voltages of ``draws`` Monte-Carlo runs under ``U[lo, hi]`` currents."""
    rng = np.random.default_rng(seed)
    x = dt / (R * C)
    a, b = math.exp(-x), R * (1 - math.exp(-x))
    v = np.full(draws, float(v0))
    for _ in range(n):
        v = a * v + b * rng.uniform(lo, hi, draws)
    return v


def mc_safety(v0, n, R, C, dt, lo, hi, v_out, draws, seed):
    return float(np.mean(mc_final_voltages(v0, n, R, C, dt, lo, hi, draws, seed) >= v_out))


def state_count(M, Nv, ns, nt):
    return Nv * (M + (M - ns) + (M - ns - nt)) if nt > 0 else Nv * (M + (M - ns))


def dense_gain(P, r, d):
    """Long-run reward per unit time of a unichain chain (dense solve)."""
    n = P.shape[0]
    A = np.vstack([(np.eye(n) - P).T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return float(pi @ r) / float(pi @ d)


def enumerate_gain(mdp):
    """Best gain over every deterministic stationary policy of ``mdp``.

    Works on the raw pairs and durations: the transformation the solver uses
    for timed models is not involved.
    """
    P = mdp.transitions.toarray()
    options = [np.flatnonzero(mdp.pair_state == s) for s in range(mdp.n_states)]
    best, count = -np.inf, 0
    for pick in itertools.product(*options):
        pick = np.array(pick)
        g = dense_gain(P[pick], mdp.rewards[pick], mdp.durations[pick])
        best = max(best, g)
        count += 1
    return best, count
