"""Reproduction recipes for the published figures and tables.

Each recipe takes a base :class:`RunConfig` (used for solver settings, seed,
horizon and replications) and returns ``{table_name: (header, rows)}``.
Parameter sets are pinned per recipe from the figure and table captions:

* ``fig3``   safety probability and rewards vs voltage, C = 2.7 mF,
  v_out = 2.4 V, U[0, 3] mA, beta = 15, theta in {0.7, 0.9, 0.95}
* ``fig4``   threshold levels per window slot, d_s = 15, n_s = 5, n_t = 20,
  U[0, 0.3] mA and U[0, 3] mA (the caption's low-energy regime)
* ``fig5``   running completion rate over time for C in {2.7, 4.7, 6.8} mF,
  U[0, 3] mA
* ``fig6``   completion rate vs gamma in [1, 12] mA for v_out in
  {1.8, 2.1, 2.4} V over 2000 s
* ``tab2``   power failures per task, U[0, 3], U[0, 6], U[0, 9] mA
* ``tab3``   total latency per scheduler, same runs
* ``combined`` per-interval reward vs n_s (n_t = 0.8 s) and vs n_t
  (n_s = 0.1 s), beta = 25, theta in {0.7, 0.9, 0.95}
* ``headline`` OSTB vs ALAP improvements at C = 4.7 mF, U[0, 3] mA
"""
from __future__ import annotations

import logging

import numpy as np

from .config import RunConfig
from .energy import Action, VoltageGrid, safety_probability
from .mdp import RewardConfig
from .pipeline import build_model, scheduler_for, sim_config, solve_model
from .simulator import Scheduler, aggregate, compare, simulate_many

log = logging.getLogger(__name__)

MA = 1e-3
FIG5_CAPACITANCES = (2.7e-3, 4.7e-3, 6.8e-3)
FIG6_GAMMAS = tuple(np.round(np.arange(1.0, 12.01, 0.5), 2))
FIG6_VOUT = (1.8, 2.1, 2.4)
TABLE_GAMMAS = (3.0, 6.0, 9.0)
THETAS = (0.7, 0.9, 0.95)


def _uniform(hi_ma):
    return {"kind": "uniform", "lo": 0.0, "hi": hi_ma * MA}


def _reps(cfg: RunConfig, minimum: int) -> int:
    return max(int(cfg.sim["replications"]), minimum)


def fig3(cfg: RunConfig, threads: int = 1) -> dict:
    c = cfg.with_overrides(device={"capacitance": 2.7e-3, "v_out": 2.4}, harvest=_uniform(3))
    p, h = c.device, c.harvest
    grid = VoltageGrid.from_params(p)
    bins = int(c.solver["current_bins"])
    header = ["task", "voltage", "p_safe", "reward_basic"] + [f"reward_theta_{t}" for t in THETAS]
    rows = []
    for task in (Action.SENSE, Action.TRANSMIT):
        ps = np.asarray(safety_probability(task, grid.levels, p, h, bins))
        curves = [RewardConfig("sigmoid", 15.0, t).transform(ps, ps[-1]) for t in THETAS]
        for k, v in enumerate(grid.levels):
            rows.append([task.label, v, ps[k], ps[k]] + [cv[k] for cv in curves])
    return {"fig3": (header, rows)}


def fig4(cfg: RunConfig, threads: int = 1) -> dict:
    header = ["harvest_hi_mA", "task", "slot", "threshold_level", "threshold_voltage"]
    rows = []
    for hi in (0.3, 3.0):
        c = cfg.with_overrides(device={"deadline": 15, "sense_steps": 5, "transmit_steps": 20},
                               harvest=_uniform(hi))
        model = build_model(c)
        sol = solve_model(model, c)
        if sol.thresholds is None:
            raise RuntimeError(f"policy for U[0,{hi}] mA is not threshold-structured")
        levels = model.grid.levels
        for task, table in (("sensing", sol.thresholds.sense),
                            ("transmitting", sol.thresholds.transmit)):
            for m, lvl in table.items():
                rows.append([hi, task, m, "never" if lvl is None else lvl,
                             "never" if lvl is None else levels[lvl]])
    return {"fig4": (header, rows)}


def fig5(cfg: RunConfig, threads: int = 1, every: int = 10) -> dict:
    header = ["capacitance_mF", "scheduler", "time_s", "completion_rate"]
    rows = []
    for cap in FIG5_CAPACITANCES:
        c = cfg.with_overrides(device={"capacitance": cap}, harvest=_uniform(3))
        model = build_model(c)
        policy = solve_model(model, c).policy
        for kind in ("ostb", "alap"):
            reports = simulate_many(sim_config(c, scheduler_for(kind, c, policy, model)),
                                    int(c.sim["replications"]), threads)
            done = np.mean([r.completed for r in reports], axis=0)
            run = np.cumsum(done) / np.arange(1, len(done) + 1)
            per = c.device.subintervals * c.device.dt
            for k in range(every - 1, len(run), every):
                rows.append([cap * 1e3, kind, (k + 1) * per, run[k]])
    return {"fig5": (header, rows)}


def fig6(cfg: RunConfig, threads: int = 1, gammas=FIG6_GAMMAS, vouts=FIG6_VOUT) -> dict:
    header = ["v_out", "gamma_mA", "scheduler", "completion_rate", "model_tasks_per_interval"]
    rows = []
    for vout in vouts:
        for g in gammas:
            c = cfg.with_overrides(device={"v_out": vout}, harvest=_uniform(g))
            model = build_model(c)
            sol = solve_model(model, c)
            for kind in ("ostb", "alap"):
                reports = simulate_many(sim_config(c, scheduler_for(kind, c, sol.policy, model)),
                                        int(c.sim["replications"]), threads)
                rate = float(np.mean([r.completion_rate for r in reports]))
                rows.append([vout, g, kind, rate, sol.report.tasks_per_interval])
    return {"fig6": (header, rows)}


def _table_runs(cfg: RunConfig, threads: int, replications: int):
    out = {}
    for g in TABLE_GAMMAS:
        c = cfg.with_overrides(harvest=_uniform(g))
        model = build_model(c)
        policy = solve_model(model, c).policy
        for kind in ("ostb", "alap"):
            reports = simulate_many(sim_config(c, scheduler_for(kind, c, policy, model)),
                                    replications, threads)
            out[(g, kind)] = aggregate(reports)
    return out


def tab2(cfg: RunConfig, threads: int = 1, runs=None) -> dict:
    runs = runs or _table_runs(cfg, threads, _reps(cfg, 20))
    header = ["harvest_hi_mA", "task", "scheduler", "failures_mean", "failures_se"]
    rows = []
    for g in TABLE_GAMMAS:
        for task, key in (("sensing", "sensing_failures"), ("transmitting", "transmit_failures")):
            for kind in ("ostb", "alap"):
                m = runs[(g, kind)][key]
                rows.append([g, task, kind, m["mean"], m["se"]])
    return {"tab2": (header, rows)}


def tab3(cfg: RunConfig, threads: int = 1, runs=None) -> dict:
    runs = runs or _table_runs(cfg, threads, _reps(cfg, 20))
    header = ["harvest_hi_mA", "scheduler", "latency_s_mean", "latency_s_se"]
    rows = []
    for g in TABLE_GAMMAS:
        for kind in ("ostb", "alap"):
            m = runs[(g, kind)]["latency_seconds"]
            rows.append([g, kind, m["mean"], m["se"]])
    return {"tab3": (header, rows)}


def combined(cfg: RunConfig, threads: int = 1) -> dict:
    header = ["sweep", "sense_s", "transmit_s", "theta", "reward_per_interval",
              "tasks_per_interval"]
    rows = []
    points = ([("sense", ns, 40) for ns in range(5, 11)]
              + [("transmit", 5, nt) for nt in range(20, 41, 4)])
    for name, ns, nt in points:
        for theta in THETAS:
            c = cfg.with_overrides(device={"sense_steps": ns, "transmit_steps": nt},
                                   reward={"kind": "sigmoid", "beta": 25.0, "theta": theta})
            model = build_model(c)
            rep = solve_model(model, c).report
            dt = c.device.dt
            rows.append([name, ns * dt, nt * dt, theta, rep.reward_per_interval,
                         rep.tasks_per_interval])
    return {"combined": (header, rows)}


def headline(cfg: RunConfig, threads: int = 1) -> dict:
    c = cfg.with_overrides(device={"capacitance": 4.7e-3}, harvest=_uniform(3))
    model = build_model(c)
    policy = solve_model(model, c).policy
    a = sim_config(c, Scheduler.ostb(policy, model))
    b = sim_config(c, Scheduler("alap"))
    res = compare(a, b, _reps(c, 20), threads)
    imp = res["improvement"]
    header = ["metric", "ostb", "alap", "improvement_pct"]
    fail = lambda r: r["sensing_failures"]["mean"] + r["transmit_failures"]["mean"]
    rows = [
        ["completion_rate", res["ostb"]["completion_rate"]["mean"],
         res["alap"]["completion_rate"]["mean"], imp["completion_pct"]],
        ["power_failures", fail(res["ostb"]), fail(res["alap"]), imp["failure_reduction_pct"]],
        ["latency_s", res["ostb"]["latency_seconds"]["mean"],
         res["alap"]["latency_seconds"]["mean"], imp["latency_reduction_pct"]],
    ]
    return {"headline": (header, rows)}


RECIPES = {
    "fig3": fig3, "fig4": fig4, "fig5": fig5, "fig6": fig6, "tab2": tab2, "tab3": tab3,
    "combined": combined, "headline": headline,
}


def run_recipe(name: str, cfg: RunConfig, threads: int = 1) -> dict:
    try:
        fn = RECIPES[name]
    except KeyError:
        raise ValueError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}") from None
    return fn(cfg, threads)
