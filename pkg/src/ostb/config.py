"""Run configuration files.

A run configuration is a JSON object with the sections ``device``,
``harvest``, ``reward``, ``solver``, ``sim``, ``output`` and optionally
``sweep``.  Only ``harvest`` is mandatory; every other field has the default
listed in :data:`DEFAULTS`.  Unknown sections or keys are rejected and the
error names the line they appear on.
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass

from .energy import DeviceParams, HarvestModel
from .mdp import CRITERIA, RewardConfig
from .simulator import SCHEDULERS

DEVICE_FIELDS = tuple(DeviceParams.__dataclass_fields__)

DEFAULTS = {
    "device": {},                      # DeviceParams defaults (Table I values)
    "reward": {"kind": "basic", "beta": 25.0, "theta": 0.9},
    "solver": {"rule": "dantzig", "rvi_tol": 1e-10, "current_bins": 256,
               "rounding": "linear", "smoothing": 0.0, "criterion": "time",
               "random_policies": 100},
    "sim": {"horizon": 2000.0, "seed": 0, "initial_voltage": None,
            "replications": 1, "scheduler": "ostb", "baseline": "alap"},
    "output": {"dir": "out", "formats": ["csv", "json"]},
}
HARVEST_KEYS = {"uniform": {"kind", "lo", "hi"}, "discrete": {"kind", "support"}}
SWEEP_KEYS = {"variable", "values", "schedulers"}
SWEEP_SECTIONS = ("device", "harvest", "reward", "solver", "sim")


class ConfigError(ValueError):
    pass


def _line_of(text: str | None, key: str, after: str | None = None) -> str:
    if not text:
        return ""
    start = 0
    if after is not None:
        m = re.search(r'"%s"\s*:' % re.escape(after), text)
        start = m.start() if m else 0
    m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, start)
    if not m:
        return ""
    return f"line {text.count(chr(10), 0, m.start()) + 1}: "


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration with all defaults filled in."""

    data: dict
    source: str | None = None

    @property
    def device(self) -> DeviceParams:
        return DeviceParams(**self.data["device"])

    @property
    def harvest(self) -> HarvestModel:
        h = self.data["harvest"]
        if h["kind"] == "uniform":
            return HarvestModel.uniform(h["lo"], h["hi"])
        return HarvestModel.discrete(h["support"])

    @property
    def reward(self) -> RewardConfig:
        return RewardConfig(**self.data["reward"])

    @property
    def solver(self) -> dict:
        return self.data["solver"]

    @property
    def sim(self) -> dict:
        return self.data["sim"]

    @property
    def output(self) -> dict:
        return self.data["output"]

    @property
    def sweep(self) -> dict | None:
        return self.data.get("sweep")

    def model_hash(self) -> str:
        """Hash of everything that determines the MDP and its policy."""
        return _digest({k: self.data[k] for k in ("device", "harvest", "reward", "solver")})

    def config_hash(self) -> str:
        """Hash of the whole configuration except the output section."""
        return _digest({k: v for k, v in self.data.items() if k != "output"})

    def with_overrides(self, **sections) -> "RunConfig":
        """Copy with ``section={key: value}`` updates, re-validated."""
        data = copy.deepcopy(self.data)
        for name, values in sections.items():
            if name == "harvest":
                data["harvest"] = dict(values)
            else:
                data.setdefault(name, {}).update(values)
        return parse_config(data)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def parse_config(raw: dict, text: str | None = None) -> RunConfig:
    """Validate a decoded configuration and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    allowed = set(DEFAULTS) | {"harvest", "sweep"}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{_line_of(text, key)}unknown section {key!r}")
    if "harvest" not in raw:
        raise ConfigError("missing required section 'harvest'")

    data = {}
    for section, defaults in DEFAULTS.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{_line_of(text, section)}section {section!r} must be an object")
        valid = DEVICE_FIELDS if section == "device" else defaults
        for key in given:
            if key not in valid:
                raise ConfigError(f"{_line_of(text, key, section)}unknown key {key!r} "
                                  f"in section {section!r}")
        merged = copy.deepcopy(defaults)
        merged.update(given)
        data[section] = merged

    h = raw["harvest"]
    if not isinstance(h, dict) or h.get("kind") not in HARVEST_KEYS:
        raise ConfigError(f"{_line_of(text, 'harvest')}harvest needs kind 'uniform' or 'discrete'")
    for key in h:
        if key not in HARVEST_KEYS[h["kind"]]:
            raise ConfigError(f"{_line_of(text, key, 'harvest')}unknown key {key!r} "
                              f"for {h['kind']} harvest")
    data["harvest"] = dict(h)

    if "sweep" in raw:
        s = raw["sweep"]
        if not isinstance(s, dict):
            raise ConfigError(f"{_line_of(text, 'sweep')}section 'sweep' must be an object")
        for key in s:
            if key not in SWEEP_KEYS:
                raise ConfigError(f"{_line_of(text, key, 'sweep')}unknown key {key!r} "
                                  f"in section 'sweep'")
        check_sweep_variable(s.get("variable", ""))
        if not isinstance(s.get("values"), list) or not s["values"]:
            raise ConfigError("sweep.values must be a non-empty list")
        data["sweep"] = {"variable": s["variable"], "values": list(s["values"]),
                         "schedulers": list(s.get("schedulers", ["ostb", "alap"]))}

    cfg = RunConfig(data, text)
    _check_values(cfg)
    return cfg


def check_sweep_variable(variable: str) -> tuple[str, str]:
    section, _, key = str(variable).partition(".")
    if section not in SWEEP_SECTIONS or not key:
        raise ConfigError(f"unknown sweep variable {variable!r}")
    valid = (DEVICE_FIELDS if section == "device"
             else {"lo", "hi"} if section == "harvest" else DEFAULTS[section])
    if key not in valid:
        raise ConfigError(f"unknown sweep variable {variable!r}")
    return section, key


def _check_values(cfg: RunConfig) -> None:
    text = cfg.source
    try:
        cfg.device
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_line_of(text, 'device')}device: {exc}") from None
    try:
        cfg.harvest
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_line_of(text, 'harvest')}harvest: {exc}") from None
    try:
        cfg.reward
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_line_of(text, 'reward')}reward: {exc}") from None
    s = cfg.solver
    if s["rule"] not in ("bland", "dantzig"):
        raise ConfigError(f"{_line_of(text, 'rule')}solver.rule must be 'bland' or 'dantzig'")
    if s["rounding"] not in ("linear", "nearest"):
        raise ConfigError(f"{_line_of(text, 'rounding')}solver.rounding must be "
                          f"'linear' or 'nearest'")
    if s["criterion"] not in CRITERIA:
        raise ConfigError(f"{_line_of(text, 'criterion')}solver.criterion must be one of "
                          f"{', '.join(CRITERIA)}")
    if int(s["current_bins"]) < 2:
        raise ConfigError(f"{_line_of(text, 'current_bins')}solver.current_bins must be >= 2")
    sim = cfg.sim
    for key in ("scheduler", "baseline"):
        if sim[key] not in SCHEDULERS:
            raise ConfigError(f"{_line_of(text, key)}sim.{key} must be one of "
                              f"{', '.join(SCHEDULERS)}")
    if int(sim["replications"]) < 1:
        raise ConfigError(f"{_line_of(text, 'replications')}sim.replications must be >= 1")
    fmts = cfg.output["formats"]
    if not isinstance(fmts, list) or not set(fmts) <= {"csv", "json"}:
        raise ConfigError(f"{_line_of(text, 'formats')}output.formats must list csv and/or json")


def load_config(path) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: {exc.msg}") from None
    return parse_config(raw, text)


def table_one_config(**sections) -> RunConfig:
    """Table I device with ``U[0, 3] mA`` harvest, updated by ``sections``."""
    raw = {"harvest": {"kind": "uniform", "lo": 0.0, "hi": 3e-3}}
    raw.update(sections)
    return parse_config(raw)
