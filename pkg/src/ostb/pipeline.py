"""Glue between run configurations, the MDP, the solver and the simulator."""
from __future__ import annotations

import numpy as np

from .config import RunConfig
from .mdp import MdpModel, build_mdp
from .simulator import Scheduler, SimConfig
from .solver import Solution, solve


def build_model(cfg: RunConfig) -> MdpModel:
    s = cfg.solver
    return build_mdp(cfg.device, cfg.harvest, cfg.reward, current_bins=int(s["current_bins"]),
                     rounding=s["rounding"], smoothing=float(s["smoothing"]),
                     criterion=s["criterion"])


def solve_model(model: MdpModel, cfg: RunConfig) -> Solution:
    return solve(model, rule=cfg.solver["rule"], rvi_tol=float(cfg.solver["rvi_tol"]))


def scheduler_for(kind: str, cfg: RunConfig, policy=None, model=None) -> Scheduler:
    if kind != "ostb":
        return Scheduler(kind)
    if policy is None:
        model = model or build_model(cfg)
        policy = solve_model(model, cfg).policy
    return Scheduler.ostb(policy, model or build_model(cfg))


def sim_config(cfg: RunConfig, scheduler: Scheduler) -> SimConfig:
    sim = cfg.sim
    return SimConfig(cfg.device, cfg.harvest, scheduler, float(sim["horizon"]),
                     int(sim["seed"]), sim["initial_voltage"])


def random_policies(model: MdpModel, count: int, seed: int = 0) -> list[np.ndarray]:
    """Uniformly random deterministic policies over each state's action set."""
    rng = np.random.default_rng(seed)
    counts = np.diff(model.first_pair)
    out = []
    for _ in range(count):
        pick = model.first_pair[:-1] + (rng.random(model.n_states) * counts).astype(np.int64)
        out.append(model.pair_action[pick].copy())
    return out
