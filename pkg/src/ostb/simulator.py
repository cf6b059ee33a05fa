"""Monte-Carlo simulation of the device under a scheduler.

The capacitor voltage is tracked continuously with the one-step RC law; the
harvested current is drawn i.i.d. per sub-interval.  A scheduler is asked for
an action whenever the device is idle at a sub-interval boundary.  A task
that lets the voltage fall below ``v_out`` at any boundary while it runs is a
power failure: it is aborted, the load is detached and the capacitor only
charges (clamped at ``v_max``) until the main interval ends.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import Action, DeviceParams, HarvestModel, VoltageGrid, quantize

SCHEDULERS = ("ostb", "alap", "asap")
CSV_COLUMNS = ("interval", "sensing_start", "tx_start", "fail_s", "fail_t", "v_end")


@dataclass(frozen=True, eq=False)
class Scheduler:
    """Decision rule at a sub-interval boundary.

    ``ostb`` looks up ``policy`` at the quantized state, ``alap`` starts each
    task at the last slot of its window and ``asap`` at the first.
    """

    kind: str
    policy: np.ndarray | None = None
    grid: VoltageGrid | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.kind!r}")
        if self.kind == "ostb" and (self.policy is None or self.grid is None):
            raise ValueError("an ostb scheduler needs a policy and a voltage grid")

    @classmethod
    def ostb(cls, policy, model) -> "Scheduler":
        return cls("ostb", np.asarray(policy, dtype=np.int64), model.grid)

    def decide(self, v: float, tau: int, flag: int, params: DeviceParams) -> Action:
        if self.kind == "alap":
            return alap_decide((tau, flag), params)
        if self.kind == "asap":
            return asap_decide((tau, flag), params)
        allowed = _task_allowed(tau, flag, params)
        if allowed is None:
            return Action.SLEEP
        s = _state_index(quantize(v, self.grid), tau, flag, params)
        return Action(int(self.policy[s]))


def _task_allowed(tau, flag, params):
    if flag == 0 and tau <= params.deadline:
        return Action.SENSE
    if flag == 1 and tau in params.transmit_window:
        return Action.TRANSMIT
    return None


def _state_index(level, tau, flag, params):
    # same canonical order as the MDP: flag-major, then tau, then level
    M, ns, nt = params.subintervals, params.sense_steps, params.transmit_steps
    offset = (0, M, M + (M - ns))[flag]
    first = (0, ns, ns + nt)[flag]
    return (offset + tau - first) * params.levels + level


def alap_decide(state, params: DeviceParams) -> Action:
    """Sleep until the last feasible start, then act regardless of voltage."""
    tau, flag = state[-2], state[-1]
    if flag == 0 and tau == params.deadline:
        return Action.SENSE
    if flag == 1 and params.has_transmit and tau == params.subintervals - params.transmit_steps:
        return Action.TRANSMIT
    return Action.SLEEP


def asap_decide(state, params: DeviceParams) -> Action:
    """Start each task as soon as its window allows."""
    tau, flag = state[-2], state[-1]
    task = _task_allowed(tau, flag, params)
    return Action.SLEEP if task is None else task


@dataclass(frozen=True, eq=False)
class SimConfig:
    params: DeviceParams
    harvest: HarvestModel
    scheduler: Scheduler
    horizon_seconds: float = 2000.0
    seed: int = 0
    initial_voltage: float | None = None      # None: v_max

    def __post_init__(self):
        per = self.params.subintervals * self.params.dt
        n = self.horizon_seconds / per
        if n < 1 or abs(n - round(n)) > 1e-9:
            raise ValueError(f"horizon must be a whole number of {per:g} s main intervals")
        v0 = self.v0
        if not 0 <= v0 <= self.params.v_max:
            raise ValueError("initial voltage must lie in [0, v_max]")

    @property
    def n_intervals(self) -> int:
        return int(round(self.horizon_seconds / (self.params.subintervals * self.params.dt)))

    @property
    def v0(self) -> float:
        return self.params.v_max if self.initial_voltage is None else float(self.initial_voltage)


@dataclass
class SimReport:
    """Per-interval records of one run.

    ``sensing_start`` and ``tx_start`` hold the starting sub-interval or -1
    when the task was not started.
    """

    params: DeviceParams
    scheduler: str
    seed: int
    sensing_start: np.ndarray
    tx_start: np.ndarray
    fail_s: np.ndarray
    fail_t: np.ndarray
    v_end: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def n_intervals(self) -> int:
        return len(self.v_end)

    @property
    def sensed(self) -> np.ndarray:
        return (self.sensing_start >= 0) & ~self.fail_s

    @property
    def transmitted(self) -> np.ndarray:
        return (self.tx_start >= 0) & ~self.fail_t

    @property
    def completed(self) -> np.ndarray:
        """Completed tasks per interval, ``xi_s * (1 + xi_t)``."""
        return self.sensed * (1 + self.transmitted)

    @property
    def completion_rate(self) -> float:
        return float(self.completed.mean())

    @property
    def sensing_failures(self) -> int:
        return int(self.fail_s.sum())

    @property
    def transmit_failures(self) -> int:
        return int(self.fail_t.sum())

    @property
    def skipped_sensing(self) -> int:
        return int((self.sensing_start < 0).sum())

    def summary(self) -> dict:
        return {
            "scheduler": self.scheduler,
            "seed": self.seed,
            "intervals": self.n_intervals,
            "completion_rate": self.completion_rate,
            "completed_tasks": int(self.completed.sum()),
            "sensing_completed": int(self.sensed.sum()),
            "transmit_completed": int(self.transmitted.sum()),
            "sensing_failures": self.sensing_failures,
            "transmit_failures": self.transmit_failures,
            "skipped_sensing": self.skipped_sensing,
            "latency_seconds": latency(self),
            "mean_v_end": float(self.v_end.mean()),
        }

    def rows(self):
        for k in range(self.n_intervals):
            yield (k, int(self.sensing_start[k]), int(self.tx_start[k]),
                   int(self.fail_s[k]), int(self.fail_t[k]), float(self.v_end[k]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow(row[:-1] + (f"{row[-1]:.6g}",))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def simulate(config: SimConfig) -> SimReport:
    """Run one seeded episode of ``config.n_intervals`` main intervals."""
    return _run(config, np.random.default_rng(config.seed))


def _run(config: SimConfig, rng: np.random.Generator) -> SimReport:
    p = config.params
    M, n_int = p.subintervals, config.n_intervals
    coef = {a: p.step_coefficients(a) for a in Action}
    charge = p.dt / p.capacitance          # load detached: dv = i dt / C
    v_max, v_out = p.v_max, p.v_out
    sched = config.scheduler
    steps = {Action.SENSE: p.sense_steps, Action.TRANSMIT: p.transmit_steps}

    currents = config.harvest.sample(rng, (n_int, M))
    sensing_start = np.full(n_int, -1, dtype=np.int64)
    tx_start = np.full(n_int, -1, dtype=np.int64)
    fail_s = np.zeros(n_int, dtype=bool)
    fail_t = np.zeros(n_int, dtype=bool)
    v_end = np.empty(n_int)

    v = config.v0
    for k in range(n_int):
        i_k = currents[k]
        tau, flag, dead = 0, 0, False
        while tau < M:
            if dead:
                v = min(v + charge * i_k[tau], v_max)
                tau += 1
                continue
            a = sched.decide(v, tau, flag, p)
            if a == Action.SLEEP:
                ca, cb = coef[a]
                v = min(ca * v + cb * i_k[tau], v_max)
                tau += 1
                continue
            ca, cb = coef[a]
            if a == Action.SENSE:
                sensing_start[k] = tau
            else:
                tx_start[k] = tau
            for j in range(steps[a]):
                v = min(ca * v + cb * i_k[tau], v_max)
                tau += 1
                if v < v_out:
                    dead = True
                    break
            if dead:
                if a == Action.SENSE:
                    fail_s[k] = True
                else:
                    fail_t[k] = True
            else:
                flag += 1
        v_end[k] = v
    return SimReport(p, sched.kind, config.seed, sensing_start, tx_start, fail_s, fail_t, v_end)


def simulate_many(config: SimConfig, replications: int, threads: int = 1) -> list[SimReport]:
    """Independent replications seeded by spawning ``config.seed``.

    Replication ``r`` always uses child stream ``r``, so results do not
    depend on ``threads``.
    """
    children = np.random.SeedSequence(config.seed).spawn(replications)
    jobs = [(config, child) for child in children]
    if threads > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(_replica, jobs))
    return [_replica(job) for job in jobs]


def _replica(job) -> SimReport:
    config, child = job
    report = _run(config, np.random.default_rng(child))
    report.extras["spawn_key"] = list(child.spawn_key)
    return report


def latency(report: SimReport) -> float:
    """Total execution latency in seconds over failure-free intervals.

    Sensing should start at sub-interval 0 and transmitting right after
    sensing ends; an interval contributes the delay of each task it started.
    """
    p = report.params
    ok = ~(report.fail_s | report.fail_t)
    s = report.sensing_start
    t = report.tx_start
    sense_delay = np.where(ok & (s >= 0), s, 0)
    tx_delay = np.where(ok & (s >= 0) & (t >= 0), t - (s + p.sense_steps), 0)
    return float((sense_delay.sum() + tx_delay.sum()) * p.dt)


def aggregate(reports) -> dict:
    """Mean and standard error of each summary metric over replications."""
    rows = [r.summary() for r in reports]
    out = {"replications": len(rows)}
    for key in ("completion_rate", "sensing_failures", "transmit_failures",
                "latency_seconds", "completed_tasks", "skipped_sensing"):
        vals = np.array([row[key] for row in rows], dtype=float)
        se = vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
        out[key] = {"mean": float(vals.mean()), "se": float(se)}
    return out


def _pct(new, old, sign=1.0):
    if old == 0:
        return 0.0 if new == old else math.inf
    return float(sign * (new - old) / old * 100.0)


def compare(ostb: SimConfig, baseline: SimConfig, replications: int = 1,
            threads: int = 1) -> dict:
    """Paired OSTB-vs-baseline metrics on common seeds.

    Improvements are percentages: completion increase, failure reduction
    (sensing plus transmitting) and latency reduction.
    """
    if (ostb.params != baseline.params or ostb.harvest != baseline.harvest
            or ostb.seed != baseline.seed or ostb.horizon_seconds != baseline.horizon_seconds
            or ostb.v0 != baseline.v0):
        raise ValueError("compared configurations must share params, harvest, horizon and seed")
    a = aggregate(simulate_many(ostb, replications, threads))
    b = aggregate(simulate_many(baseline, replications, threads))
    fail_a = a["sensing_failures"]["mean"] + a["transmit_failures"]["mean"]
    fail_b = b["sensing_failures"]["mean"] + b["transmit_failures"]["mean"]
    return {
        "schedulers": [ostb.scheduler.kind, baseline.scheduler.kind],
        "seed": ostb.seed,
        "replications": replications,
        "horizon_seconds": ostb.horizon_seconds,
        ostb.scheduler.kind if ostb.scheduler.kind != baseline.scheduler.kind else "a": a,
        baseline.scheduler.kind if ostb.scheduler.kind != baseline.scheduler.kind else "b": b,
        "improvement": {
            "completion_pct": _pct(a["completion_rate"]["mean"], b["completion_rate"]["mean"]),
            "failure_reduction_pct": _pct(fail_a, fail_b, -1.0),
            "latency_reduction_pct": _pct(a["latency_seconds"]["mean"],
                                          b["latency_seconds"]["mean"], -1.0),
        },
    }


def with_scheduler(config: SimConfig, scheduler: Scheduler) -> SimConfig:
    return replace(config, scheduler=scheduler)
