"""Benchmark configuration: YAML schema, scale profiles and validation.

A config file is a YAML mapping; every key is optional and overrides the
defaults of the selected profile (``desk`` or ``paper``)::

    profile: desk            # desk | paper
    seed: 0                  # master seed
    out: results/desk        # output directory
    d: 64
    laws: [gauss, bl]        # keys of dpsbench.levy.JUMP_LAWS
    operators: [identity, convolution]
    snr_db: 25.0
    counts: {train: 1000, val: 100, test: 100}
    diffusion: {T: 200}      # T != 1000 uses the rescaled short schedule
    gold: {burn_in: 5000, samples: 20000, keep: 200}
    denoise: {burn_in: 100, samples: 300}
    methods: [l2, l1, cdps, diffpir, dpnp]
    denoisers:
      - {name: oracle}
      - {name: external, label: mine, command: [python, -m, mypkg.serve]}
    tuning:
      model_items: 100       # validation items for l2/l1 (null: all)
      dps_items: 5           # validation items for DPS grids
      dps_samples: 10        # trajectories per DPS validation run
      grids:
        l2: {a: -5, b: 5, n: 1000}
        l1: {a: -5, b: 5, n: 1000}
        cdps: {a: -3, b: 1, n: 10}
        diffpir: {a: -4, b: 1, n: 5, zeta: [0.3, 0.7]}
        dpnp: {a: -1, b: 4, n: 10}
    run: {items: 50, n_samples: 50}
    alpha: 0.9
    diagnose: {law: st1, sigma: 1.0, chains: 200, iterations: 2000, n_avg: 1000, tol: 0.01}

Training signals are never stored; they are drawn only to calibrate the
noise level of every (law, operator) pair.
"""

import copy
from dataclasses import dataclass, field

import yaml

from .. import external  # noqa: F401  registers the subprocess denoiser
from ..diffusion import _DENOISERS
from ..dps import _STEPS
from ..levy import JUMP_LAWS
from ..operators import KINDS

MODEL_METHODS = ("l2", "l1")

_COMMON = {
    "seed": 0,
    "out": "results",
    "d": 64,
    "snr_db": 25.0,
    "denoise": {"burn_in": 100, "samples": 300},
    "methods": ["l2", "l1", "cdps", "diffpir", "dpnp"],
    "denoisers": [{"name": "oracle"}],
    "alpha": 0.9,
    "diagnose": {"law": "st1", "sigma": 1.0, "chains": 200, "iterations": 2000, "n_avg": 1000, "tol": 0.01},
}

PROFILES = {
    "desk": {
        "laws": ["gauss", "bl"],
        "operators": ["identity", "convolution"],
        "counts": {"train": 1000, "val": 100, "test": 100},
        "diffusion": {"T": 200},
        "gold": {"burn_in": 5000, "samples": 20000, "keep": 200},
        "tuning": {
            "model_items": None,
            "dps_items": 5,
            "dps_samples": 10,
            "grids": {
                "l2": {"a": -5.0, "b": 5.0, "n": 1000},
                "l1": {"a": -5.0, "b": 5.0, "n": 1000},
                "cdps": {"a": -3.0, "b": 1.0, "n": 10},
                "diffpir": {"a": -4.0, "b": 1.0, "n": 5, "zeta": [0.3, 0.7]},
                "dpnp": {"a": -1.0, "b": 4.0, "n": 10},
            },
        },
        "run": {"items": 50, "n_samples": 50},
    },
    "paper": {
        "laws": ["gauss", "laplace", "bl", "st1", "st2", "st3"],
        "operators": list(KINDS),
        "counts": {"train": 1_000_000, "val": 1000, "test": 1000},
        "diffusion": {"T": 1000},
        "gold": {"burn_in": 100_000, "samples": 200_000, "keep": 200},
        "tuning": {
            "model_items": None,
            "dps_items": 10,
            "dps_samples": 10,
            "grids": {
                "l2": {"a": -5.0, "b": 5.0, "n": 1000},
                "l1": {"a": -5.0, "b": 5.0, "n": 1000},
                "cdps": {"a": -3.0, "b": 1.0, "n": 40},
                "diffpir": {"a": -4.0, "b": 1.0, "n": 20, "zeta": [0.3, 0.7]},
                "dpnp": {"a": -1.0, "b": 4.0, "n": 40},
            },
        },
        "run": {"items": None, "n_samples": 50},
    },
}


class ConfigError(ValueError):
    """Invalid benchmark configuration."""


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class BenchmarkConfig:
    """Validated benchmark settings; see the module docstring for the schema."""

    profile: str
    seed: int
    out: str
    d: int
    laws: list
    operators: list
    snr_db: float
    counts: dict
    diffusion: dict
    gold: dict
    denoise: dict
    methods: list
    denoisers: list
    tuning: dict
    run: dict
    alpha: float
    diagnose: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data, profile=None):
        data = dict(data or {})
        profile = profile or data.pop("profile", "desk")
        data.pop("profile", None)
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        merged = _merge(_merge(_COMMON, PROFILES[profile]), data)
        unknown = set(merged) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(profile=profile, **merged)

    def to_dict(self):
        return {name: copy.deepcopy(getattr(self, name)) for name in self.__dataclass_fields__}

    def validate(self):
        if self.seed is None:
            raise ConfigError("a master seed is required")
        self.seed = int(self.seed)
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if int(self.d) < 33:
            raise ConfigError("d must be at least 33")
        for split in ("train", "val", "test"):
            if int(self.counts.get(split, 0)) < 1:
                raise ConfigError(f"counts.{split} must be at least 1")
        for law in self.laws:
            if law not in JUMP_LAWS:
                raise ConfigError(f"unknown law {law!r}; choose from {sorted(JUMP_LAWS)}")
        for op in self.operators:
            if op not in KINDS:
                raise ConfigError(f"unknown operator {op!r}; choose from {KINDS}")
        for method in self.methods:
            if method not in MODEL_METHODS and method not in _STEPS:
                raise ConfigError(f"method {method!r} is not registered")
            if method not in MODEL_METHODS and method not in self.tuning["grids"]:
                raise ConfigError(f"no tuning grid for method {method!r}")
        labels = set()
        for den in self.denoisers:
            if den.get("name") not in _DENOISERS:
                raise ConfigError(f"denoiser {den.get('name')!r} is not registered")
            label = den.get("label", den["name"])
            if label in labels:
                raise ConfigError(f"duplicate denoiser label {label!r}")
            labels.add(label)
        if int(self.diffusion["T"]) < 2:
            raise ConfigError("diffusion.T must be at least 2")
        g = self.gold
        if int(g["burn_in"]) < 0 or int(g["samples"]) < 1 or not 2 <= int(g["keep"]) <= int(g["samples"]):
            raise ConfigError("gold needs burn_in >= 0 and 2 <= keep <= samples")
        if not 0.0 < float(self.alpha) < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if int(self.run["n_samples"]) < 2:
            raise ConfigError("run.n_samples must be at least 2")

    @property
    def n_run(self):
        """Number of test items the run stage processes (gold standards cover all test items)."""
        items = self.run.get("items")
        n = int(self.counts["test"])
        return n if items is None else min(int(items), n)

    def denoiser_label(self, den):
        return den.get("label", den["name"])

    def dps_methods(self):
        return [m for m in self.methods if m not in MODEL_METHODS]

    def model_methods(self):
        return [m for m in self.methods if m in MODEL_METHODS]


def load_config(path=None, profile=None, seed=None, out=None):
    """Read a YAML config (or only the profile defaults when ``path`` is None) and apply CLI overrides."""
    data = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("the config file must hold a mapping")
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["out"] = str(out)
    return BenchmarkConfig.from_dict(data, profile)
