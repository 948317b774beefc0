"""Run configuration: one YAML file drives every command."""

from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .errors import ValidationError
from .models import TrainConfig
from .simcourt import SimParams
from .synthesis import SynthesisOptions

ROLES = ("ego", "future", "verifier", "recurrent")


@dataclass
class RunConfig:
    seed: int = 0
    replicates: int = 3
    out: str = "runs/default"
    sim: SimParams = field(default_factory=SimParams)
    train: dict = field(default_factory=lambda: {r: TrainConfig() for r in ROLES})
    branches: int = 4
    synthesis: SynthesisOptions = field(default_factory=SynthesisOptions)
    recurrent_epsilon: float = 1e-3
    hidden: int = 64
    methods: tuple = ("nn", "recurrent", "noverifier", "full")

    def validate(self):
        if self.replicates < 1:
            raise ValidationError("replicates must be at least 1")
        if self.branches < 1:
            raise ValidationError("branches must be at least 1")
        self.sim.validate()
        for cfg in self.train.values():
            cfg.validate()
        self.synthesis.validate(self.branches)
        if not self.recurrent_epsilon > 0:
            raise ValidationError("recurrent_epsilon must be positive")

    def with_seed(self, seed):
        self.seed = int(seed)
        self.sim.seed = int(seed)
        return self

    def train_config(self, role, replicate):
        """Training config for ``role`` with a seed derived from (seed, replicate, role)."""
        base = self.train[role]
        derived = np.random.SeedSequence([self.seed, replicate, ROLES.index(role)]).generate_state(1)[0]
        return TrainConfig(base.iterations, base.lr, base.momentum, base.weight_decay, base.batch_size, int(derived))

    def to_dict(self):
        return {
            "seed": self.seed,
            "replicates": self.replicates,
            "out": self.out,
            "sim": self.sim.to_dict(),
            "train": {r: {k: v for k, v in asdict(c).items() if k != "seed"} for r, c in self.train.items()},
            "branches": self.branches,
            "synthesis": {k: v for k, v in asdict(self.synthesis).items() if k != "use_verifier"},
            "recurrent_epsilon": self.recurrent_epsilon,
            "hidden": self.hidden,
            "methods": list(self.methods),
        }


def _dataclass_from(cls, d, where):
    allowed = {f.name for f in fields(cls)}
    unknown = set(d) - allowed
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")
    defaults = cls()
    kw = {}
    for k, v in d.items():
        ref = getattr(defaults, k)
        try:
            if isinstance(ref, bool):
                kw[k] = bool(v)
            elif isinstance(ref, (int, float)):
                # YAML 1.1 reads exponent forms like 1e-4 as strings
                kw[k] = type(ref)(float(v)) if isinstance(ref, float) else int(v)
            elif isinstance(ref, tuple):
                kw[k] = tuple(float(x) if isinstance(x, (str, float)) else x for x in v)
            else:
                kw[k] = v
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad value for {where}.{k}: {v!r}") from exc
    return cls(**kw)


def from_dict(d):
    d = dict(d or {})
    cfg = RunConfig()
    allowed = {f.name for f in fields(RunConfig)}
    unknown = set(d) - allowed
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for key in ("replicates", "out", "branches", "recurrent_epsilon", "hidden"):
        if key in d:
            try:
                setattr(cfg, key, type(getattr(cfg, key))(d[key]) if key == "out" else type(getattr(cfg, key))(float(d[key])))
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"bad value for {key}: {d[key]!r}") from exc
    if "methods" in d:
        cfg.methods = tuple(d["methods"])
        bad = set(cfg.methods) - set(RunConfig.methods)
        if bad:
            raise ValidationError(f"unknown methods: {sorted(bad)}")
    if "sim" in d:
        cfg.sim = _dataclass_from(SimParams, d["sim"], "sim")
    if "train" in d:
        defaults = d["train"].get("defaults", {})
        for role in ROLES:
            section = {**defaults, **d["train"].get(role, {})}
            cfg.train[role] = _dataclass_from(TrainConfig, section, f"train.{role}")
        extra = set(d["train"]) - set(ROLES) - {"defaults"}
        if extra:
            raise ValidationError(f"unknown train sections: {sorted(extra)}")
    if "synthesis" in d:
        cfg.synthesis = _dataclass_from(SynthesisOptions, d["synthesis"], "synthesis")
    # the master seed always drives the simulator too
    cfg.with_seed(d.get("seed", 0))
    cfg.validate()
    return cfg


def load_config(path):
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    with open(path, encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ValidationError(f"{path}: invalid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    return from_dict(data)
