"""Finite MDP of the device: states, action sets, kernels and rewards.

States are ``(level, tau, flag)`` and are stored in a fixed order: flag
first, then local clock ``tau``, then voltage level.  All ``N_v`` states
sharing ``(tau, flag)`` form a superstate, and superstate ``k`` owns the
contiguous state indices ``k * N_v ... (k + 1) * N_v - 1``.  Voltage levels
are 0-based throughout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .energy import (
    Action,
    DeviceParams,
    HarvestModel,
    VoltageGrid,
    as_action,
    final_voltage_distribution,
    safety_probability,
)

MODEL_FORMAT = "ostb.mdp"
MODEL_VERSION = 1
# "time": average reward per sub-interval (every main interval has M of them);
# "epoch": average reward per decision epoch, a task counting as one epoch.
CRITERIA = ("time", "epoch")


class FiniteMdp:
    """A finite MDP stored as state-action pairs.

    ``pair_state[k]`` and ``pair_action[k]`` identify pair ``k``; pairs are
    sorted by state.  ``transitions`` is a CSR matrix with one row per pair
    and one column per state, ``rewards`` has one entry per pair.
    ``durations`` (default all ones) is the length of each pair's action in
    time units; when it is not all ones the model is semi-Markov and the
    solvers maximise reward per unit time through :meth:`time_normalized`.
    """

    def __init__(self, pair_state, pair_action, transitions, rewards, n_states=None,
                 durations=None):
        self.pair_state = np.asarray(pair_state, dtype=np.int64)
        self.pair_action = np.asarray(pair_action, dtype=np.int64)
        self.transitions = sp.csr_matrix(transitions, dtype=float)
        self.rewards = np.asarray(rewards, dtype=float)
        self.n_states = int(n_states if n_states is not None else self.transitions.shape[1])
        n_pairs = len(self.pair_state)
        self.durations = (np.ones(n_pairs) if durations is None
                          else np.asarray(durations, dtype=float))
        if (self.transitions.shape != (n_pairs, self.n_states) or len(self.rewards) != n_pairs
                or self.durations.shape != (n_pairs,)):
            raise ValueError("inconsistent MDP dimensions")
        if np.any(self.durations < 1):
            raise ValueError("durations must be at least one time unit")
        if np.any(np.diff(self.pair_state) < 0):
            raise ValueError("pairs must be sorted by state")
        counts = np.bincount(self.pair_state, minlength=self.n_states)
        if np.any(counts == 0):
            raise ValueError("every state needs at least one action")
        self.first_pair = np.concatenate([[0], np.cumsum(counts)])
        self.n_actions = int(self.pair_action.max()) + 1
        self.pair_index = np.full((self.n_states, self.n_actions), -1, dtype=np.int64)
        self.pair_index[self.pair_state, self.pair_action] = np.arange(n_pairs)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_state)

    def actions(self, s: int) -> list[int]:
        return [int(a) for a in self.pair_action[self.first_pair[s]:self.first_pair[s + 1]]]

    def decidable_states(self) -> np.ndarray:
        return np.flatnonzero(np.diff(self.first_pair) > 1)

    def default_policy(self) -> np.ndarray:
        """Lowest action code in every state."""
        return self.pair_action[self.first_pair[:-1]].copy()

    def policy_pairs(self, policy) -> np.ndarray:
        policy = np.asarray(policy, dtype=np.int64)
        pairs = self.pair_index[np.arange(self.n_states), policy]
        if np.any(pairs < 0):
            bad = int(np.flatnonzero(pairs < 0)[0])
            raise ValueError(f"action {policy[bad]} not allowed in state {bad}")
        return pairs

    def induced_chain(self, policy) -> tuple[sp.csr_matrix, np.ndarray]:
        """Transition matrix and reward vector of a deterministic policy."""
        pairs = self.policy_pairs(policy)
        return self.transitions[pairs], self.rewards[pairs]

    @property
    def timed(self) -> bool:
        return bool(np.any(self.durations != 1))

    def time_normalized(self) -> "FiniteMdp":
        """Equivalent per-epoch MDP whose gain is reward per unit time.

        Standard data transformation: ``r / d`` and ``I + (P - I) / d`` for a
        pair of duration ``d``.  Biases are shared with the original model.
        """
        if not self.timed:
            return self
        if getattr(self, "_normalized", None) is not None:
            return self._normalized
        inv = 1.0 / self.durations
        own = sp.csr_matrix((np.ones(self.n_pairs), (np.arange(self.n_pairs), self.pair_state)),
                            shape=self.transitions.shape)
        P = own + sp.diags(inv) @ (self.transitions - own)
        self._normalized = FiniteMdp(self.pair_state, self.pair_action, P.tocsr(),
                                     self.rewards * inv, self.n_states)
        return self._normalized

    def check(self, tol: float = 1e-9) -> None:
        sums = np.asarray(self.transitions.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1) > tol):
            raise ValueError(f"kernel rows must sum to 1 (worst {np.abs(sums - 1).max():.3g})")
        if self.transitions.nnz and self.transitions.data.min() < 0:
            raise ValueError("negative transition probability")


@dataclass(frozen=True)
class RewardConfig:
    kind: str = "basic"
    beta: float = 25.0
    theta: float = 0.9

    def __post_init__(self):
        if self.kind not in ("basic", "sigmoid"):
            raise ValueError(f"unknown reward kind {self.kind!r}")

    def transform(self, p_safe: np.ndarray, p_safe_max: float) -> np.ndarray:
        p_safe = np.asarray(p_safe, dtype=float)
        if self.kind == "basic":
            return p_safe
        return ((1 + np.exp(-self.beta * (p_safe_max - self.theta)))
                / (1 + np.exp(-self.beta * (p_safe - self.theta))))

    def to_dict(self) -> dict:
        if self.kind == "basic":
            return {"kind": "basic"}
        return {"kind": "sigmoid", "beta": self.beta, "theta": self.theta}


@dataclass(frozen=True)
class MicroMatrices:
    sleep: np.ndarray
    sense: np.ndarray
    transmit: np.ndarray | None

    def __getitem__(self, action) -> np.ndarray:
        action = as_action(action)
        mat = (self.sleep, self.sense, self.transmit)[action]
        if mat is None:
            raise KeyError(f"no micro matrix for {action.label}")
        return mat


@dataclass(frozen=True)
class StateSpace:
    """Admissible states and their superstate grouping."""

    n_levels: int
    superstates: tuple[tuple[int, int], ...]     # (tau, flag) in canonical order
    index: dict = field(repr=False)              # (tau, flag) -> superstate number

    @property
    def n_states(self) -> int:
        return self.n_levels * len(self.superstates)

    def state(self, level: int, tau: int, flag: int) -> int:
        try:
            k = self.index[(tau, flag)]
        except KeyError:
            raise KeyError(f"no admissible superstate ({tau}, {flag})") from None
        if not 0 <= level < self.n_levels:
            raise KeyError(f"level {level} out of range")
        return k * self.n_levels + level

    def block(self, tau: int, flag: int) -> np.ndarray:
        k = self.index[(tau, flag)]
        return np.arange(k * self.n_levels, (k + 1) * self.n_levels)

    def decode(self, s: int) -> tuple[int, int, int]:
        tau, flag = self.superstates[s // self.n_levels]
        return s % self.n_levels, tau, flag

    def table(self) -> np.ndarray:
        """``(n_states, 3)`` array of ``(level, tau, flag)``."""
        sup = np.repeat(np.array(self.superstates, dtype=np.int64), self.n_levels, axis=0)
        lev = np.tile(np.arange(self.n_levels), len(self.superstates))
        return np.column_stack([lev, sup])


def build_state_space(params: DeviceParams, grid: VoltageGrid | None = None) -> StateSpace:
    n_levels = len(grid) if grid is not None else params.levels
    M, ns, nt = params.subintervals, params.sense_steps, params.transmit_steps
    sup = [(tau, 0) for tau in range(M)]
    sup += [(tau, 1) for tau in range(ns, M)]
    if params.has_transmit:
        sup += [(tau, 2) for tau in range(ns + nt, M)]
    return StateSpace(n_levels, tuple(sup), {ts: k for k, ts in enumerate(sup)})


def allowed_actions(state, params: DeviceParams) -> tuple[Action, ...]:
    """Action set of ``(level, tau, flag)``."""
    _, tau, flag = state
    if flag == 0 and tau in params.sense_window:
        return (Action.SLEEP, Action.SENSE)
    if flag == 1 and tau in params.transmit_window:
        return (Action.SLEEP, Action.TRANSMIT)
    return (Action.SLEEP,)


def next_superstate(tau: int, flag: int, action, params: DeviceParams) -> tuple[int, int]:
    M = params.subintervals
    action = as_action(action)
    if action == Action.SLEEP:
        return (tau + 1, flag) if tau < M - 1 else (0, 0)
    if action == Action.SENSE:
        nxt = tau + params.sense_steps
        return (nxt, 1) if nxt < M else (0, 0)
    nxt = tau + params.transmit_steps
    return (nxt, 2) if nxt < M else (0, 0)


def build_micro_matrices(params: DeviceParams, harvest: HarvestModel,
                         grid: VoltageGrid | None = None, current_bins: int = 256,
                         rounding: str = "linear", smoothing: float = 0.0) -> MicroMatrices:
    """Voltage-level kernels for one sleep step and one full run of each task."""
    grid = grid or VoltageGrid.from_params(params)

    def kernel(action):
        n = params.steps(action)
        rows = np.array([
            final_voltage_distribution(action, v, n, harvest, grid, params,
                                       current_bins, rounding)
            for v in grid.levels
        ])
        if smoothing > 0:
            rows = rows + smoothing
            rows /= rows.sum(axis=1, keepdims=True)
        return rows

    transmit = kernel(Action.TRANSMIT) if params.has_transmit else None
    return MicroMatrices(kernel(Action.SLEEP), kernel(Action.SENSE), transmit)


def assemble_transition_kernel(space: StateSpace, micro: MicroMatrices,
                               params: DeviceParams):
    """Pairs and the sparse pair-by-state kernel.

    Returns ``(pair_state, pair_action, P)``.
    """
    n = space.n_levels
    if micro.sleep.shape != (n, n):
        raise ValueError("micro matrices do not match the number of levels")
    pair_state, pair_action = [], []
    rows, cols, vals = [], [], []
    for k, (tau, flag) in enumerate(space.superstates):
        actions = allowed_actions((0, tau, flag), params)
        for level in range(n):
            s = k * n + level
            for a in actions:
                row = len(pair_state)
                pair_state.append(s)
                pair_action.append(int(a))
                dest = space.block(*next_superstate(tau, flag, a, params))
                probs = micro[a][level]
                nz = np.flatnonzero(probs)
                rows.extend([row] * len(nz))
                cols.extend(dest[nz])
                vals.extend(probs[nz])
    P = sp.csr_matrix((vals, (rows, cols)), shape=(len(pair_state), space.n_states))
    return np.array(pair_state), np.array(pair_action), P


class MdpModel(FiniteMdp):
    """The device MDP together with everything it was built from."""

    def __init__(self, params, harvest, grid, space, micro, reward, safety,
                 pair_state, pair_action, transitions, rewards, options=None):
        self.options = dict(options or {})
        self.options.setdefault("criterion", "time")
        if self.options["criterion"] not in CRITERIA:
            raise ValueError(f"unknown criterion {self.options['criterion']!r}")
        durations = None
        if self.options["criterion"] == "time":
            durations = np.array([1, params.sense_steps, params.transmit_steps],
                                 dtype=float)[np.asarray(pair_action)]
        super().__init__(pair_state, pair_action, transitions, rewards, space.n_states, durations)
        self.params = params
        self.harvest = harvest
        self.grid = grid
        self.space = space
        self.micro = micro
        self.reward_config = reward
        self.safety = safety              # {Action: P_safe per level}

    def state(self, level, tau, flag) -> int:
        return self.space.state(level, tau, flag)

    def decode(self, s) -> tuple[int, int, int]:
        return self.space.decode(s)

    def reset_block(self) -> np.ndarray:
        return self.space.block(0, 0)

    def to_dict(self) -> dict:
        coo = self.transitions.tocoo()
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": params_to_dict(self.params),
            "harvest": self.harvest.to_dict(),
            "reward": self.reward_config.to_dict(),
            "options": self.options,
            "grid": self.grid.levels.tolist(),
            "states": self.space.table().tolist(),
            "pairs": {"state": self.pair_state.tolist(),
                      "action": self.pair_action.tolist()},
            "kernel": {"row": coo.row.tolist(), "col": coo.col.tolist(),
                       "val": coo.data.tolist()},
            "rewards": self.rewards.tolist(),
            "micro": {"sleep": self.micro.sleep.tolist(),
                      "sense": self.micro.sense.tolist(),
                      "transmit": None if self.micro.transmit is None
                      else self.micro.transmit.tolist()},
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, doc: dict) -> "MdpModel":
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValueError("not an MDP model document of a supported version")
        params = DeviceParams(**doc["params"])
        h = doc["harvest"]
        harvest = (HarvestModel.uniform(h["lo"], h["hi"]) if h["kind"] == "uniform"
                   else HarvestModel.discrete(h["support"]))
        grid = VoltageGrid.from_params(params)
        space = build_state_space(params, grid)
        m = doc["micro"]
        micro = MicroMatrices(np.array(m["sleep"]), np.array(m["sense"]),
                              None if m["transmit"] is None else np.array(m["transmit"]))
        k = doc["kernel"]
        P = sp.csr_matrix((k["val"], (k["row"], k["col"])),
                          shape=(len(doc["pairs"]["state"]), space.n_states))
        opts = doc.get("options", {})
        safety = _safety_tables(params, harvest, grid, opts.get("current_bins", 256))
        return cls(params, harvest, grid, space, micro, RewardConfig(**doc["reward"]), safety,
                   doc["pairs"]["state"], doc["pairs"]["action"], P, doc["rewards"], opts)

    @classmethod
    def from_json(cls, path) -> "MdpModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def params_to_dict(params: DeviceParams) -> dict:
    from dataclasses import asdict
    return asdict(params)


def _safety_tables(params, harvest, grid, current_bins):
    tasks = [Action.SENSE] + ([Action.TRANSMIT] if params.has_transmit else [])
    return {a: np.asarray(safety_probability(a, grid.levels, params, harvest, current_bins))
            for a in tasks}


def reward_table(params, harvest, grid, config: RewardConfig, current_bins=256):
    """Reward per level for each task action; sleeping always earns 0."""
    safety = _safety_tables(params, harvest, grid, current_bins)
    return {a: config.transform(p, p[-1]) for a, p in safety.items()}, safety


def reward(state, action, config: RewardConfig, params: DeviceParams, harvest: HarvestModel,
           grid: VoltageGrid | None = None, current_bins: int = 256) -> float:
    """Reward for taking ``action`` in ``(level, tau, flag)``."""
    action = as_action(action)
    if action not in allowed_actions(state, params):
        raise ValueError(f"{action.label} is not allowed in state {tuple(state)}")
    if action == Action.SLEEP:
        return 0.0
    grid = grid or VoltageGrid.from_params(params)
    p = safety_probability(action, grid.levels, params, harvest, current_bins)
    return float(config.transform(p[state[0]], p[-1]))


def build_mdp(params: DeviceParams, harvest: HarvestModel, reward: RewardConfig | None = None,
              current_bins: int = 256, rounding: str = "linear",
              smoothing: float = 0.0, criterion: str = "time") -> MdpModel:
    """Build the complete device MDP.

    ``criterion`` selects what the average reward is taken over, see
    :data:`CRITERIA`.
    """
    reward = reward or RewardConfig()
    grid = VoltageGrid.from_params(params)
    space = build_state_space(params, grid)
    micro = build_micro_matrices(params, harvest, grid, current_bins, rounding, smoothing)
    pair_state, pair_action, P = assemble_transition_kernel(space, micro, params)
    rewards_by_task, safety = reward_table(params, harvest, grid, reward, current_bins)
    levels = space.table()[pair_state, 0]
    r = np.zeros(len(pair_state))
    for a, values in rewards_by_task.items():
        mask = pair_action == int(a)
        r[mask] = values[levels[mask]]
    options = {"current_bins": current_bins, "rounding": rounding, "smoothing": smoothing,
               "criterion": criterion}
    model = MdpModel(params, harvest, grid, space, micro, reward, safety,
                     pair_state, pair_action, P, r, options)
    model.check()
    return model
