"""Experiment configuration: a flat dataclass with a ``key = value`` text form."""

import hashlib
import os
from dataclasses import dataclass, field, fields, replace

from .errors import InvalidConfig
from .synthdata import SynthParams

ENV_PREFIX = "OMH_"

# named ablation sweeps
PRESETS = {
    "levels": [("depth", [1, 2, 3, 4])],
    "expansion": [("expansion", [1.0, 1.5, 2.0, 3.0])],
    "temperature": [("ot_temperature", [0.02, 0.05, 0.10])],
}


@dataclass
class ExperimentConfig:
    # hierarchy
    depth: int = 3
    base_clusters: int = 3
    expansion: float = 2.0
    ot_temperature: float = 0.02
    # loss weights
    sparsity_weight: float = 0.01
    structure_weight: float = 0.3
    distill_b: float = 0.5
    stop_gradient: bool = False
    plan_scale: str = "column"  # "column" or "mass", see optim.matching_plan
    probe: bool = True  # train a stop-gradient cluster probe for evaluation
    # optimisation
    steps: int = 300
    learning_rate: float = 1e-3
    seed: int = 0
    proj_hidden: int = 32
    proj_dim: int = 16
    eval_interval: int = 50
    deterministic: bool = True
    # transport solver
    sinkhorn_max_iterations: int = 10_000
    sinkhorn_tolerance: float = 1e-8
    log_domain: bool = True
    # synthetic data
    n_coarse: int = 3
    fine_per_coarse: int = 2
    dim: int = 32
    noise: float = 0.05
    coarse_angle: float = 90.0
    fine_angle: float = 15.0
    n_images: int = 16
    locations: int = 48
    data_seed: int | None = None  # None: reuse ``seed``
    # io
    output_dir: str = "runs/omh"
    sweep: list = field(default_factory=list)  # [(field, [values...]), ...]

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.depth < 1:
            raise InvalidConfig("depth must be >= 1")
        if self.base_clusters < 1:
            raise InvalidConfig("base_clusters must be >= 1")
        if self.expansion < 1:
            raise InvalidConfig("expansion must be >= 1")
        if not self.ot_temperature > 0:
            raise InvalidConfig("ot_temperature must be > 0")
        if self.sparsity_weight < 0 or self.structure_weight < 0:
            raise InvalidConfig("loss weights must be >= 0")
        if self.plan_scale not in ("column", "mass"):
            raise InvalidConfig(f"plan_scale must be 'column' or 'mass', got {self.plan_scale!r}")
        if self.steps < 0:
            raise InvalidConfig("steps must be >= 0")
        if self.eval_interval < 1:
            raise InvalidConfig("eval_interval must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.proj_hidden < 1 or self.proj_dim < 1:
            raise InvalidConfig("projector sizes must be >= 1")
        names = {f.name for f in fields(self)}
        for key, values in self.sweep:
            if key not in names or key in ("sweep", "output_dir"):
                raise InvalidConfig(f"cannot sweep over {key!r}")
            if not values:
                raise InvalidConfig(f"sweep axis {key!r} has no values")
        self.synth_params().validate()

    def synth_params(self):
        return SynthParams(
            n_coarse=self.n_coarse, fine_per_coarse=self.fine_per_coarse, dim=self.dim,
            noise=self.noise, coarse_angle=self.coarse_angle, fine_angle=self.fine_angle,
            n_images=self.n_images, locations=self.locations)

    @property
    def dataset_seed(self):
        return self.seed if self.data_seed is None else self.data_seed

    def with_values(self, **kw):
        return replace(self, **kw)

    def format(self, include_sweep=True):
        lines = []
        for f in fields(self):
            if f.name == "sweep" and not include_sweep:
                continue
            lines.append(f"{f.name} = {_format_value(f.name, getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self):
        """Short digest of everything that affects a single run."""
        text = replace(self, output_dir="", sweep=[]).format(include_sweep=False)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _format_value(name, v):
    if name == "sweep":
        return "; ".join(f"{k}=" + ",".join(_format_scalar(x) for x in vals) for k, vals in v)
    return _format_scalar(v)


def _format_scalar(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELD_TYPES = {
    "depth": int, "base_clusters": int, "expansion": float, "ot_temperature": float,
    "sparsity_weight": float, "structure_weight": float, "distill_b": float,
    "stop_gradient": bool, "plan_scale": str, "probe": bool,
    "steps": int, "learning_rate": float, "seed": int,
    "proj_hidden": int, "proj_dim": int, "eval_interval": int, "deterministic": bool,
    "sinkhorn_max_iterations": int, "sinkhorn_tolerance": float, "log_domain": bool,
    "n_coarse": int, "fine_per_coarse": int, "dim": int, "noise": float,
    "coarse_angle": float, "fine_angle": float, "n_images": int, "locations": int,
    "data_seed": "optional_int", "output_dir": str, "sweep": "sweep",
}


def parse_value(key, text):
    if key not in _FIELD_TYPES:
        raise InvalidConfig(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "optional_int":
            return None if text.lower() in ("", "none") else int(text)
        if kind == "sweep":
            return parse_sweep(text)
        if kind is int:
            return int(text)
        return kind(text)
    except ValueError:
        raise InvalidConfig(f"bad value for {key}: {text!r}") from None


def parse_axis(text):
    """``field=v1,v2,...`` -> ``(field, [typed values])``."""
    if "=" not in text:
        raise InvalidConfig(f"sweep axis must look like field=v1,v2 (got {text!r})")
    key, vals = (t.strip() for t in text.split("=", 1))
    if key not in _FIELD_TYPES or key in ("sweep", "output_dir"):
        raise InvalidConfig(f"cannot sweep over {key!r}")
    return key, [parse_value(key, v) for v in vals.split(",") if v.strip()]


def parse_sweep(text):
    if not text.strip():
        return []
    axes = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if part in PRESETS:
            axes.extend(PRESETS[part])
        else:
            axes.append(parse_axis(part))
    return axes


def parse(text, base=None):
    """Parse ``key = value`` lines (``#`` comments allowed) over ``base``."""
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {n}: expected 'key = value', got {raw!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        values[key] = parse_value(key, val)
    return replace(base or ExperimentConfig(), **values)


def apply_overrides(cfg, pairs):
    """Apply ``key=value`` strings (from ``--set``)."""
    values = {}
    for p in pairs:
        if "=" not in p:
            raise InvalidConfig(f"--set expects key=value, got {p!r}")
        key, val = (t.strip() for t in p.split("=", 1))
        values[key] = parse_value(key, val)
    return replace(cfg, **values)


def apply_env(cfg, environ=None):
    """Apply ``OMH_<FIELD>`` environment variables."""
    env = os.environ if environ is None else environ
    values = {}
    for name in _FIELD_TYPES:
        key = ENV_PREFIX + name.upper()
        if key in env:
            values[name] = parse_value(name, env[key])
    return replace(cfg, **values) if values else cfg


def load(path, overrides=(), environ=None):
    """File, then environment, then ``--set`` overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        try:
            text = open(path).read()
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from None
        cfg = parse(text, cfg)
    cfg = apply_env(cfg, environ)
    return apply_overrides(cfg, overrides)
