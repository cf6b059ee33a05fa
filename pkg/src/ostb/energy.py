"""Capacitor voltage dynamics for a battery-less device.

The load in each mode is a constant resistance ``R = E / I``.  Over a
sub-interval of length ``dt`` with a constant harvested current ``i`` the
capacitor voltage follows the RC law

    v1 = exp(-x) * (v0 + R * (1 - exp(-x)) * i * exp(x)),   x = dt / (R C)

and chaining ``n`` such steps gives the closed form implemented in
:func:`voltage_after`.  Because the final voltage is an affine function of
the i.i.d. currents, its law is ``a * v0 + S`` where ``S`` does not depend on
``v0``; :func:`harvest_sum_law` computes ``S`` once by sequential
convolution and every other routine reuses it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np


class Action(enum.IntEnum):
    SLEEP = 0
    SENSE = 1
    TRANSMIT = 2

    @property
    def label(self) -> str:
        return ("sleeping", "sensing", "transmitting")[self]


_MODE_ALIASES = {
    "l": Action.SLEEP, "sleep": Action.SLEEP, "sleeping": Action.SLEEP,
    "s": Action.SENSE, "sense": Action.SENSE, "sensing": Action.SENSE,
    "t": Action.TRANSMIT, "transmit": Action.TRANSMIT, "transmitting": Action.TRANSMIT,
}


def as_action(mode) -> Action:
    """Accept an :class:`Action`, its integer code, or a name like ``'s'``."""
    if isinstance(mode, Action):
        return mode
    if isinstance(mode, str):
        try:
            return _MODE_ALIASES[mode.lower()]
        except KeyError:
            raise ValueError(f"unknown mode {mode!r}") from None
    if isinstance(mode, (int, np.integer)) and 0 <= int(mode) <= 2:
        return Action(int(mode))
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class DeviceParams:
    """Physical and timing constants of the device.

    Durations (``deadline``, ``sense_steps``, ``transmit_steps``) are in
    sub-intervals.  ``transmit_steps = 0`` builds a sensing-only device.
    ``operating_voltage`` is the ``E`` in ``R = E / I``; ``None`` means
    ``v_max``.
    """

    capacitance: float = 4.7e-3
    v_out: float = 1.8
    v_min: float = 1.8
    v_max: float = 3.3
    dt: float = 0.02
    subintervals: int = 50
    deadline: int = 15
    sense_steps: int = 5
    transmit_steps: int = 20
    i_sleep: float = 0.1e-3
    i_sense: float = 1.7e-3
    i_transmit: float = 4.36e-3
    operating_voltage: float | None = None
    levels: int = 30

    def __post_init__(self):
        if not self.capacitance > 0:
            raise ValueError("capacitance must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.subintervals < 1:
            raise ValueError("subintervals must be a positive integer")
        if self.levels < 2:
            raise ValueError("levels must be at least 2")
        if not self.v_min < self.v_max:
            raise ValueError("need v_min < v_max")
        if self.v_out > self.v_max:
            raise ValueError("need v_out <= v_max")
        if self.deadline < 0 or self.sense_steps < 1 or self.transmit_steps < 0:
            raise ValueError("task durations and deadline must be non-negative "
                             "(sensing needs at least one sub-interval)")
        if self.deadline + self.sense_steps > self.subintervals:
            raise ValueError(
                f"window constraint violated: deadline + sense_steps = "
                f"{self.deadline + self.sense_steps} > subintervals = {self.subintervals}")
        if self.sense_steps + self.transmit_steps > self.subintervals:
            raise ValueError(
                f"window constraint violated: sense_steps + transmit_steps = "
                f"{self.sense_steps + self.transmit_steps} > subintervals = {self.subintervals}")
        for name in ("i_sleep", "i_sense", "i_transmit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive (finite load resistance)")
        if self.operating_voltage is not None and not self.operating_voltage > 0:
            raise ValueError("operating_voltage must be positive")

    @property
    def E(self) -> float:
        return self.v_max if self.operating_voltage is None else self.operating_voltage

    @property
    def has_transmit(self) -> bool:
        return self.transmit_steps > 0

    def current(self, mode) -> float:
        return (self.i_sleep, self.i_sense, self.i_transmit)[as_action(mode)]

    def resistance(self, mode) -> float:
        return self.E / self.current(mode)

    def steps(self, mode) -> int:
        """Sub-intervals one action occupies."""
        return (1, self.sense_steps, self.transmit_steps)[as_action(mode)]

    def step_coefficients(self, mode) -> tuple[float, float]:
        """``(a, b)`` with one-step voltage ``a * v + b * i``."""
        R = self.resistance(mode)
        x = self.dt / (R * self.capacitance)
        a = math.exp(-x)
        return a, R * -math.expm1(-x)

    @property
    def sense_window(self) -> range:
        return range(0, self.deadline + 1)

    @property
    def transmit_window(self) -> range:
        if not self.has_transmit:
            return range(0)
        return range(self.sense_steps, self.subintervals - self.transmit_steps + 1)


def table_one(**overrides) -> DeviceParams:
    """Default parameter set (4.7 mF, 30 levels on [1.8, 3.3] V, n_t = 20)."""
    return DeviceParams(**overrides)


@dataclass(frozen=True)
class HarvestModel:
    """I.i.d. per-sub-interval harvested current.

    Either ``uniform(lo, hi)`` or a finite ``discrete`` law given as
    ``((amps, prob), ...)``.
    """

    kind: str
    lo: float = 0.0
    hi: float = 0.0
    support: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        if self.kind == "uniform":
            if not 0 <= self.lo < self.hi:
                raise ValueError("uniform harvest requires 0 <= lo < hi")
        elif self.kind == "discrete":
            if not self.support:
                raise ValueError("discrete harvest needs a non-empty support")
            amps = [a for a, _ in self.support]
            probs = [p for _, p in self.support]
            if min(amps) < 0:
                raise ValueError("harvested current must be non-negative")
            if min(probs) < 0 or abs(math.fsum(probs) - 1.0) > 1e-12:
                raise ValueError("discrete harvest probabilities must sum to 1")
        else:
            raise ValueError(f"unknown harvest kind {self.kind!r}")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "HarvestModel":
        return cls("uniform", lo=float(lo), hi=float(hi))

    @classmethod
    def discrete(cls, support) -> "HarvestModel":
        return cls("discrete", support=tuple((float(a), float(p)) for a, p in support))

    @classmethod
    def constant(cls, amps: float) -> "HarvestModel":
        return cls.discrete([(amps, 1.0)])

    @property
    def max_current(self) -> float:
        if self.kind == "uniform":
            return self.hi
        return max(a for a, p in self.support if p > 0)

    @property
    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.lo + self.hi)
        return math.fsum(a * p for a, p in self.support)

    def atoms(self, bins: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Discrete approximation: equal-width midpoints for uniform laws."""
        if self.kind == "uniform":
            if bins < 2:
                raise ValueError("current_bins must be at least 2")
            width = (self.hi - self.lo) / bins
            values = self.lo + width * (np.arange(bins) + 0.5)
            return values, np.full(bins, 1.0 / bins)
        values = np.array([a for a, _ in self.support], dtype=float)
        probs = np.array([p for _, p in self.support], dtype=float)
        keep = probs > 0
        return values[keep], probs[keep]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size)
        values, probs = self.atoms()
        if len(values) == 1:
            return np.full(size, values[0])
        return rng.choice(values, size=size, p=probs)

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "lo": self.lo, "hi": self.hi}
        return {"kind": "discrete", "support": [list(x) for x in self.support]}


@dataclass(frozen=True)
class VoltageGrid:
    v_min: float
    v_max: float
    n: int

    def __post_init__(self):
        if self.n < 2 or not self.v_min < self.v_max:
            raise ValueError("degenerate voltage grid")

    @classmethod
    def from_params(cls, params: DeviceParams) -> "VoltageGrid":
        return cls(params.v_min, params.v_max, params.levels)

    @property
    def levels(self) -> np.ndarray:
        return np.linspace(self.v_min, self.v_max, self.n)

    @property
    def spacing(self) -> float:
        return (self.v_max - self.v_min) / (self.n - 1)

    def __len__(self):
        return self.n


def quantize(v, grid: VoltageGrid):
    """Nearest level index (0-based), clamped; exact midpoints round up."""
    u = (np.asarray(v, dtype=float) - grid.v_min) / grid.spacing
    idx = np.floor(u + 0.5 + 1e-9)
    idx = np.clip(idx, 0, grid.n - 1).astype(np.int64)
    return int(idx) if idx.ndim == 0 else idx


def spread_onto_grid(values, weights, grid: VoltageGrid, rounding: str = "linear") -> np.ndarray:
    """Project weighted voltages onto grid levels, clamping to [v_min, v_max].

    ``nearest`` puts each weight on the closest level.  ``linear`` splits it
    between the two neighbouring levels so that the mean is preserved.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if rounding == "nearest":
        return np.bincount(quantize(values, grid).ravel(), weights.ravel(), minlength=grid.n)
    if rounding != "linear":
        raise ValueError(f"unknown rounding {rounding!r}")
    u = np.clip((values - grid.v_min) / grid.spacing, 0.0, grid.n - 1)
    lo = np.minimum(np.floor(u).astype(np.int64), grid.n - 2)
    frac = u - lo
    out = np.bincount(lo.ravel(), (weights * (1 - frac)).ravel(), minlength=grid.n)
    out += np.bincount((lo + 1).ravel(), (weights * frac).ravel(), minlength=grid.n)
    return out


def voltage_after(mode, v0: float, currents: Sequence[float], params: DeviceParams) -> float:
    """Closed-form voltage after ``len(currents)`` sub-intervals in ``mode``.

    Not clamped.
    """
    action = as_action(mode)
    i = np.asarray(currents, dtype=float)
    if np.any(i < 0):
        raise ValueError("harvested current must be non-negative")
    if v0 < 0:
        raise ValueError("v0 must be non-negative")
    n = len(i)
    if n == 0:
        return float(v0)
    R = params.resistance(action)
    x = params.dt / (R * params.capacitance)
    j = np.arange(n)
    # fold the outer exp(-n x) into the sum to avoid overflow for long runs
    acc = math.fsum(i * np.exp((j + 1 - n) * x))
    return math.exp(-n * x) * v0 + R * -math.expm1(-x) * acc


@dataclass(frozen=True)
class SumLaw:
    """Law of the harvest contribution ``S`` to the final voltage.

    ``S`` takes value ``offset + k * step`` with probability ``probs[k]``;
    ``decay`` is the multiplier applied to ``v0``.  Each atom stands for a
    uniform spread of width ``step`` around its value (``step = 0`` means
    ``S`` is deterministic).
    """

    decay: float
    offset: float
    step: float
    probs: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.offset + self.step * np.arange(len(self.probs))

    def final_values(self, v0) -> np.ndarray:
        return self.decay * v0 + self.values

    def prob_at_least(self, v0, threshold: float):
        """P(decay * v0 + S >= threshold) for scalar or array ``v0``."""
        v0 = np.asarray(v0, dtype=float)
        cut = threshold - self.decay * v0[..., None]
        vals = self.values
        if self.step == 0.0:
            p = ((vals >= cut) * self.probs).sum(axis=-1)
        else:
            frac = np.clip((vals + 0.5 * self.step - cut) / self.step, 0.0, 1.0)
            p = (frac * self.probs).sum(axis=-1)
        p = np.clip(p, 0.0, 1.0)
        return float(p) if p.ndim == 0 else p


@lru_cache(maxsize=256)
def harvest_sum_law(mode, n_steps: int, params: DeviceParams, harvest: HarvestModel,
                    current_bins: int = 256) -> SumLaw:
    """Convolve the ``n_steps`` weighted i.i.d. current terms on a common lattice.

    Each term's atoms are split linearly between the two nearest lattice
    points (mean preserving); the lattice has about ``current_bins`` cells
    per term.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    action = as_action(mode)
    R = params.resistance(action)
    x = params.dt / (R * params.capacitance)
    j = np.arange(n_steps)
    weights = R * -math.expm1(-x) * np.exp((j + 1 - n_steps) * x)
    decay = math.exp(-n_steps * x)

    amps, probs = harvest.atoms(current_bins)
    c0 = float(amps.min())
    spread = float(amps.max()) - c0
    offset = float(weights.sum()) * c0
    if spread == 0.0:
        return SumLaw(decay, offset, 0.0, np.ones(1))

    cells = max(current_bins, 2 * len(amps))
    step = float(weights.max()) * spread / cells
    law = np.ones(1)
    for w in weights:
        pos = w * (amps - c0) / step
        lo = np.floor(pos).astype(np.int64)
        frac = pos - lo
        kernel = np.bincount(lo, probs * (1 - frac), minlength=lo.max() + 2)
        kernel += np.bincount(lo + 1, probs * frac, minlength=lo.max() + 2)
        law = np.convolve(law, kernel)
    law = np.trim_zeros(law, "b")
    return SumLaw(decay, offset, step, law / law.sum())


def final_voltage_distribution(mode, v0: float, n_steps: int, harvest: HarvestModel,
                               grid: VoltageGrid, params: DeviceParams,
                               current_bins: int = 256,
                               rounding: str = "linear") -> np.ndarray:
    """Distribution over grid levels of the voltage after ``n_steps`` in ``mode``."""
    law = harvest_sum_law(mode, int(n_steps), params, harvest, int(current_bins))
    out = spread_onto_grid(law.final_values(v0), law.probs, grid, rounding)
    return out / out.sum()


def safety_probability(task, v0, params: DeviceParams, harvest: HarvestModel,
                       current_bins: int = 256):
    """Probability that the voltage after the full task stays at or above ``v_out``.

    Only the final voltage is checked.  ``v0`` may be an array.
    """
    action = as_action(task)
    if action == Action.SLEEP:
        raise ValueError("safety probability is defined for sensing and transmitting only")
    n = params.steps(action)
    if n < 1:
        raise ValueError("device has no transmit task")
    law = harvest_sum_law(action, n, params, harvest, int(current_bins))
    return law.prob_at_least(v0, params.v_out)
