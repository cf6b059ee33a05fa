"""Average-reward optimal policies for the device MDP.

The optimal stationary policy comes from the occupation-measure linear
program

    max  sum x(s,a) r(s,a)
    s.t. x >= 0,  sum x = 1,
         sum_a x(s',a) = sum_{s,a} x(s,a) P(s'|s,a)   for every s'

solved with the in-repo simplex (:mod:`ostb.simplex`).  Relative value
iteration is an independent route to the same gain and supplies the bias
used for states the occupation measure leaves empty.

Models with action durations (see :meth:`FiniteMdp.time_normalized`) are
solved through their time-normalised equivalent, so gains are reward per
unit time and occupation measures are over time rather than epochs.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from . import simplex
from .energy import Action
from .mdp import FiniteMdp, MdpModel

log = logging.getLogger(__name__)

POLICY_FORMAT = "ostb.policy"
POLICY_VERSION = 1
NEVER = None            # threshold sentinel: no level triggers the task


class SolverError(RuntimeError):
    pass


class ThresholdStructureError(ValueError):
    """A decidable superstate whose actions are not a step function of the level."""

    def __init__(self, superstate, pattern):
        self.superstate = superstate
        self.pattern = pattern
        super().__init__(f"superstate (tau={superstate[0]}, flag={superstate[1]}) is not "
                         f"threshold-structured: actions by level {pattern}")


@dataclass
class OccupationMeasure:
    x: np.ndarray                 # one entry per state-action pair
    objective: float
    gain: float                   # dual of the normalisation row
    bias: np.ndarray              # duals of the balance rows, last state pinned to 0
    iterations: int

    def residuals(self, mdp: FiniteMdp) -> tuple[float, float]:
        """``(|sum x - 1|, max balance residual)``."""
        inflow = mdp.transitions.T @ self.x
        outflow = np.bincount(mdp.pair_state, self.x, minlength=mdp.n_states)
        return abs(self.x.sum() - 1.0), float(np.abs(outflow - inflow).max())


def _lp_matrix(mdp: FiniteMdp) -> sp.csc_matrix:
    n = mdp.n_states
    E = sp.csr_matrix((np.ones(mdp.n_pairs), (np.arange(mdp.n_pairs), mdp.pair_state)),
                      shape=(mdp.n_pairs, n))
    flow = (E - mdp.transitions).T.tocsr()[: n - 1]
    return sp.vstack([flow, sp.csr_matrix(np.ones((1, mdp.n_pairs)))], format="csc")


def solve_lp(mdp: FiniteMdp, rule: str = "dantzig", tol: float = 1e-10,
             max_iter: int = 1_000_000, start_policy=None) -> OccupationMeasure:
    """Optimal occupation measure of a unichain MDP.

    The simplex starts from the basis of ``start_policy`` (default: the
    lowest action code everywhere) and falls back to a phase-one start when
    that basis is singular.
    """
    mdp = mdp.time_normalized()
    A = _lp_matrix(mdp)
    b = np.zeros(mdp.n_states)
    b[-1] = 1.0
    start = mdp.default_policy() if start_policy is None else np.asarray(start_policy)
    basis = mdp.policy_pairs(start)
    try:
        res = simplex.solve(A, b, mdp.rewards, basis=basis, rule=rule, tol=tol, max_iter=max_iter)
    except (simplex.SingularBasisError, simplex.InfeasibleError):
        log.info("starting policy basis unusable, running phase one")
        try:
            res = simplex.solve(A, b, mdp.rewards, rule=rule, tol=tol, max_iter=max_iter)
        except simplex.LpError as exc:
            raise SolverError(str(exc)) from exc
    except simplex.LpError as exc:
        raise SolverError(str(exc)) from exc
    bias = np.append(res.duals[:-1], 0.0)
    occ = OccupationMeasure(res.x, res.objective, float(res.duals[-1]), bias, res.iterations)
    norm_err, flow_err = occ.residuals(mdp)
    if norm_err > 1e-8 or flow_err > 1e-8:
        raise SolverError(f"occupation measure violates constraints ({norm_err:.2e}, {flow_err:.2e})")
    return occ


@dataclass
class RviResult:
    gain: float
    bias: np.ndarray
    policy: np.ndarray
    iterations: int
    span: float


def q_values(mdp: FiniteMdp, bias: np.ndarray) -> np.ndarray:
    mdp = mdp.time_normalized()
    return mdp.rewards + mdp.transitions @ bias


def greedy_policy(mdp: FiniteMdp, q: np.ndarray, tie_tol: float = 0.0) -> np.ndarray:
    """Per-state argmax of ``q``; near-ties go to the higher action code (the task)."""
    starts = mdp.first_pair[:-1]
    best = np.maximum.reduceat(q, starts)
    cand = np.where(q >= best[mdp.pair_state] - tie_tol, np.arange(mdp.n_pairs), -1)
    return mdp.pair_action[np.maximum.reduceat(cand, starts)]


def relative_value_iteration(mdp: FiniteMdp, tol: float = 1e-10, max_iters: int = 1_000_000,
                             aperiodicity: float = 0.5, ref_state: int = 0) -> RviResult:
    """Relative value iteration on the aperiodicity-transformed MDP.

    Stops when the span of successive differences falls below ``tol``
    (in untransformed units).  Raises :class:`SolverError` otherwise.
    """
    mdp = mdp.time_normalized()
    lam = aperiodicity
    starts = mdp.first_pair[:-1]
    P, r = mdp.transitions, mdp.rewards
    h = np.zeros(mdp.n_states)
    span = np.inf
    for it in range(1, max_iters + 1):
        th = np.maximum.reduceat(r + P @ h, starts)
        w = lam * th + (1 - lam) * h
        diff = w - h
        lo, hi = diff.min(), diff.max()
        span = (hi - lo) / lam
        h = w - w[ref_state]
        if span < tol:
            gain = 0.5 * (lo + hi) / lam
            q = q_values(mdp, h)
            return RviResult(gain, h, greedy_policy(mdp, q), it, span)
    raise SolverError(f"relative value iteration did not converge in {max_iters} iterations "
                      f"(span {span:.3e})")


def advantage(mdp: FiniteMdp, bias: np.ndarray, state: int) -> dict:
    """Q-value advantage of each action over sleeping in a decidable state."""
    actions = mdp.actions(state)
    if len(actions) < 2:
        raise ValueError(f"state {state} has a single allowed action")
    q = q_values(mdp, bias)
    pairs = mdp.pair_index[state, actions]
    base = q[mdp.pair_index[state, int(Action.SLEEP)]]
    return {Action(a): float(q[p] - base) for a, p in zip(actions, pairs)}


def extract_policy(occ: OccupationMeasure, mdp: FiniteMdp, bias: np.ndarray | None = None,
                   tol: float = 1e-9, tie_tol: float = 1e-7) -> np.ndarray:
    """Deterministic policy from an occupation measure.

    A state with mass picks its massive action; ties prefer the task action,
    then the larger mass.  Empty states are filled greedily from ``bias``
    (computed by relative value iteration when not given).  Finally any state
    whose task action has positive reward and is conserving under ``bias``
    (Q-value within ``tie_tol`` of the best) takes the task, and a
    zero-reward task gives way to sleeping when sleeping is conserving.  The
    result still attains the maximum in the optimality equation, so it is
    gain-optimal, and it is the throughput-preferring member of the optimal
    set.
    """
    x = occ.x
    if bias is None:
        bias = relative_value_iteration(mdp).bias
    policy = np.empty(mdp.n_states, dtype=np.int64)
    empty = []
    for s in range(mdp.n_states):
        lo, hi = mdp.first_pair[s], mdp.first_pair[s + 1]
        massive = [k for k in range(lo, hi) if x[k] > tol]
        if not massive:
            empty.append(s)
            continue
        best = max(massive, key=lambda k: (mdp.pair_action[k] != Action.SLEEP, x[k]))
        policy[s] = mdp.pair_action[best]
    q = q_values(mdp, bias)
    greedy = greedy_policy(mdp, q, tie_tol=tie_tol)
    policy[empty] = greedy[empty]
    # only a task that can earn something is worth preferring; a zero-reward
    # task is conserving in drained states but just courts a power failure
    pairs = mdp.pair_index[np.arange(mdp.n_states), greedy]
    useful = (greedy != int(Action.SLEEP)) & (mdp.rewards[pairs] > tol)
    policy[useful] = greedy[useful]
    # and a zero-reward task yields to sleeping whenever sleeping is conserving
    states = np.arange(mdp.n_states)
    pairs = mdp.pair_index[states, policy]
    sleep = mdp.pair_index[states, int(Action.SLEEP)]
    idle = ((policy != int(Action.SLEEP)) & (mdp.rewards[pairs] <= tol)
            & (q[sleep] >= q[pairs] - tie_tol))
    policy[idle] = int(Action.SLEEP)
    return policy


def stationary_distribution(P: sp.spmatrix) -> np.ndarray:
    """Stationary law of a unichain transition matrix."""
    n = P.shape[0]
    A = (sp.identity(n, format="csr") - sp.csr_matrix(P)).T.tolil()
    A[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = spla.spsolve(A.tocsc(), rhs)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


@dataclass
class GainReport:
    gain: float                                  # per epoch, or per time unit if timed
    stationary: np.ndarray                       # over decision epochs
    epochs_per_interval: float | None = None
    reward_per_interval: float | None = None
    tasks_per_interval: float | None = None      # expected safe task completions


def evaluate_policy(mdp: FiniteMdp, policy) -> GainReport:
    """Gain of a deterministic policy from its embedded chain."""
    P, r = mdp.induced_chain(policy)
    pi = stationary_distribution(P)
    gain = float(pi @ r) / float(pi @ mdp.durations[mdp.policy_pairs(policy)])
    report = GainReport(gain, pi)
    if isinstance(mdp, MdpModel):
        reset_mass = pi[mdp.reset_block()].sum()
        levels = mdp.space.table()[:, 0]
        policy = np.asarray(policy)
        tasks = np.zeros(mdp.n_states)
        for a, p in mdp.safety.items():
            mask = policy == int(a)
            tasks[mask] = p[levels[mask]]
        report.epochs_per_interval = 1.0 / reset_mass
        report.reward_per_interval = float(pi @ r) / reset_mass
        report.tasks_per_interval = float(pi @ tasks) / reset_mass
    return report


def brute_force_optimum(mdp: FiniteMdp, max_decidable: int = 20) -> tuple[float, np.ndarray]:
    """Best gain over every deterministic stationary policy (small models only)."""
    dec = mdp.decidable_states()
    if len(dec) > max_decidable:
        raise ValueError(f"{len(dec)} decidable states is too many to enumerate")
    choices = [mdp.actions(s) for s in dec]
    best, best_policy = -np.inf, None
    policy = mdp.default_policy()
    work = mdp.time_normalized()
    for combo in itertools.product(*choices):
        policy[dec] = combo
        P, r = work.induced_chain(policy)
        pi = stationary_distribution(P.toarray())
        g = float(pi @ r)
        if g > best:
            best, best_policy = g, policy.copy()
    return best, best_policy


@dataclass
class RecurrenceReport:
    n_recurrent: int
    recurrent_classes: list
    transient: np.ndarray
    reset_in_recurrent: bool | None

    def to_dict(self) -> dict:
        return {"recurrent_classes": self.n_recurrent,
                "class_sizes": [len(c) for c in self.recurrent_classes],
                "transient_states": int(len(self.transient)),
                "reset_superstate_recurrent": self.reset_in_recurrent}


def verify_unichain(policy, mdp: FiniteMdp, reset_states=None) -> RecurrenceReport:
    """Closed communicating classes of the chain a deterministic policy induces."""
    P, _ = mdp.induced_chain(policy)
    P = sp.csr_matrix(P)
    P.eliminate_zeros()
    n_comp, labels = connected_components(P, directed=True, connection="strong")
    coo = P.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    open_comp = np.zeros(n_comp, dtype=bool)
    open_comp[labels[coo.row[leaving]]] = True
    closed = np.flatnonzero(~open_comp)
    classes = [np.flatnonzero(labels == c) for c in closed]
    transient = np.flatnonzero(open_comp[labels])
    if reset_states is None and isinstance(mdp, MdpModel):
        reset_states = mdp.reset_block()
    reset_ok = None
    if reset_states is not None:
        reset_ok = len(classes) == 1 and bool(np.isin(reset_states, classes[0]).any())
    return RecurrenceReport(len(classes), classes, transient, reset_ok)


@dataclass
class ThresholdTable:
    """Lowest level that triggers each task, per window slot (``None`` = never)."""

    sense: dict = field(default_factory=dict)
    transmit: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"sense": {str(k): v for k, v in self.sense.items()},
                "transmit": {str(k): v for k, v in self.transmit.items()}}


def extract_thresholds(policy, mdp: MdpModel) -> ThresholdTable:
    """Threshold levels; raises :class:`ThresholdStructureError` on a non-step superstate."""
    policy = np.asarray(policy)
    table = ThresholdTable()
    p = mdp.params
    for flag, window, task, out in ((0, p.sense_window, Action.SENSE, table.sense),
                                    (1, p.transmit_window, Action.TRANSMIT, table.transmit)):
        for m in window:
            acts = policy[mdp.space.block(m, flag)]
            is_task = acts == int(task)
            first = int(np.argmax(is_task)) if is_task.any() else None
            if first is not None and not is_task[first:].all():
                raise ThresholdStructureError((m, flag), acts.tolist())
            out[m] = first
    return table


def threshold_violations(policy, mdp: MdpModel) -> list:
    """Every decidable superstate that is not a step function of the level."""
    bad = []
    p = mdp.params
    for flag, window, task in ((0, p.sense_window, Action.SENSE),
                               (1, p.transmit_window, Action.TRANSMIT)):
        for m in window:
            is_task = np.asarray(policy)[mdp.space.block(m, flag)] == int(task)
            if is_task.any() and not is_task[int(np.argmax(is_task)):].all():
                bad.append((m, flag))
    return bad


@dataclass
class Solution:
    policy: np.ndarray
    occupation: OccupationMeasure
    rvi: RviResult
    report: GainReport
    thresholds: ThresholdTable | None


def solve(mdp: MdpModel, rule: str = "dantzig", rvi_tol: float = 1e-10) -> Solution:
    """LP solve, RVI cross-check and policy extraction in one call."""
    occ = solve_lp(mdp, rule=rule)
    rvi = relative_value_iteration(mdp, tol=rvi_tol)
    if abs(rvi.gain - occ.objective) > 1e-6 * max(1.0, abs(occ.objective)):
        raise SolverError(f"LP objective {occ.objective!r} and RVI gain {rvi.gain!r} disagree")
    policy = extract_policy(occ, mdp, rvi.bias)
    report = evaluate_policy(mdp, policy)
    try:
        thresholds = extract_thresholds(policy, mdp)
    except ThresholdStructureError as exc:
        log.warning("%s", exc)
        thresholds = None
    return Solution(policy, occ, rvi, report, thresholds)


def policy_document(solution: Solution, mdp: MdpModel, model_hash: str = "") -> dict:
    return {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "model_hash": model_hash,
        "reward": mdp.reward_config.to_dict(),
        "grid": mdp.grid.levels.tolist(),
        "thresholds": solution.thresholds.to_dict() if solution.thresholds else None,
        "actions": solution.policy.tolist(),
        "gain": solution.occupation.objective,
        "rvi_gain": solution.rvi.gain,
        "reward_per_interval": solution.report.reward_per_interval,
        "tasks_per_interval": solution.report.tasks_per_interval,
    }


def load_policy(path) -> tuple[np.ndarray, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != POLICY_FORMAT or doc.get("version") != POLICY_VERSION:
        raise ValueError(f"{path} is not a policy document of a supported version")
    return np.asarray(doc["actions"], dtype=np.int64), doc
