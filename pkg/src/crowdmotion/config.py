"""Run configuration: a flat JSON document of hyperparameters and paths.

Every field can be overridden from the command line with ``--field-name``.
Unknown keys are rejected so a misspelt hyperparameter never goes unnoticed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .model import NetConfig
from .synth import BEHAVIOURS, ScenarioConfig, parse_segments
from .training import TrainConfig


class ConfigError(ValueError):
    """Base class for invalid configuration."""


class UnknownKeyError(ConfigError):
    pass


class FieldTypeError(ConfigError):
    pass


class FieldRangeError(ConfigError):
    pass


def _f(default, help: str, **meta):
    if isinstance(default, (list, dict)):
        return field(default_factory=lambda: list(default), metadata={"help": help, **meta})
    return field(default=default, metadata={"help": help, **meta})


@dataclass
class RunConfig:
    # feature extraction
    m: int = _f(20, "frames per snippet")
    tau: int = _f(1, "snippet stride in frames")
    D: int = _f(8, "direction sectors")
    scale_factors: list = _f([1, 2, 4], "scale factors, e.g. 1,2,4")
    shoulder_px: float = _f(8.0, "average pedestrian shoulder width in pixels (sets the 1x region side)")
    eps_static: float = _f(1e-3, "speed below which a vector counts as static (px/frame)")
    connectivity: int = _f(4, "grid adjacency, 4 or 8")
    # network
    hidden_dim: int = _f(32, "first GCN layer width")
    embed_dim: int = _f(16, "C, width of each channel embedding")
    attn_dim: int = _f(32, "attention query/key width")
    gcn_bias: bool = _f(True, "add a bias to each GCN layer")
    bias_init: float = _f(0.1, "initial value of the first GCN layer bias")
    lambda_fus: float = _f(1.0, "fusion loss weight")
    lambda_aux: float = _f(1.0, "auxiliary loss weight")
    lambda_sof: float = _f(1.0, "soft-sharing loss weight")
    # optimisation
    learning_rate: float = _f(3e-4, "Adam learning rate")
    beta1: float = _f(0.9, "Adam first-moment decay")
    beta2: float = _f(0.999, "Adam second-moment decay")
    adam_eps: float = _f(1e-8, "Adam denominator epsilon")
    batch_size: int = _f(8, "snippets per mini-batch")
    epochs: int = _f(100, "maximum training epochs")
    early_stop_patience: int = _f(10, "epochs without enough improvement before stopping (0 disables)")
    early_stop_min_delta: float = _f(0.001, "relative improvement required over the patience window")
    seed: int = _f(42, "seed for initialisation and shuffling")
    # scoring and evaluation
    lambda_mov: float = _f(0.2, "moving-average weight of the anomaly score")
    min_auc: float | None = _f(None, "eval fails (exit 5) when AUC is below this")
    max_eer: float | None = _f(None, "eval fails (exit 5) when EER is above this")
    # gradient check
    gradcheck_coords: int = _f(200, "coordinates sampled by gradcheck")
    gradcheck_rtol: float = _f(1e-4, "relative error tolerance of gradcheck")
    # synthetic data
    width: int = _f(96, "synthetic frame width (px)")
    height: int = _f(64, "synthetic frame height (px)")
    speed: float = _f(2.0, "synthetic base speed v (px/frame)")
    sigma: float | None = _f(None, "synthetic pixel noise (px/frame); default 0.05 * speed")
    synth_seed: int = _f(0, "seed of the synthetic generator")
    segments: str = _f("laminar:2000", "segment plan, e.g. laminar:300,counter_flow:300")
    turbulence_period: int = _f(3, "frames between turbulence direction redraws")
    turbulence_cell: int = _f(8, "turbulence cell side (px)")
    pulse_period: int = _f(12, "turbulence speed pulse period (frames)")
    # paths
    flow: str | None = _f(None, "MSCF flow file", path=True)
    labels: str | None = _f(None, "labels file, one 0/1 per frame", path=True)
    graphs: str | None = _f(None, "graph dump (JSON Lines)", path=True)
    checkpoint: str | None = _f(None, "model checkpoint (JSON)", path=True)
    scores: str | None = _f(None, "per-frame score file", path=True)
    metrics: str | None = _f(None, "metrics JSON", path=True)
    report: str | None = _f(None, "gradcheck report file", path=True)

    def __post_init__(self) -> None:
        validate(self)

    # ----------------------------------------------------------------------

    def net_config(self) -> NetConfig:
        return NetConfig(
            scale_factors=tuple(self.scale_factors),
            hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim,
            attn_dim=self.attn_dim,
            gcn_bias=self.gcn_bias,
            bias_init=self.bias_init,
            lambda_fus=self.lambda_fus,
            lambda_aux=self.lambda_aux,
            lambda_sof=self.lambda_sof,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            batch_size=self.batch_size,
            epochs=self.epochs,
            early_stop_patience=self.early_stop_patience,
            early_stop_min_delta=self.early_stop_min_delta,
            seed=self.seed,
        )

    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(
            width=self.width,
            height=self.height,
            speed=self.speed,
            sigma=self.sigma,
            seed=self.synth_seed,
            segments=parse_segments(self.segments),
            turbulence_period=self.turbulence_period,
            turbulence_cell=self.turbulence_cell,
            pulse_period=self.pulse_period,
            min_duration=self.m,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write_echo(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}

# fields whose values shape the extracted graphs or the network; a checkpoint
# or graph dump built with different values cannot be mixed with this run
FEATURE_KEYS = ("m", "tau", "D", "scale_factors", "shoulder_px", "eps_static", "connectivity")
MODEL_KEYS = FEATURE_KEYS + ("hidden_dim", "embed_dim", "attn_dim", "gcn_bias")

_INT = {"m", "tau", "D", "connectivity", "hidden_dim", "embed_dim", "attn_dim", "batch_size", "epochs",
        "early_stop_patience", "seed", "gradcheck_coords", "width", "height", "synth_seed",
        "turbulence_period", "turbulence_cell", "pulse_period"}
_FLOAT = {"shoulder_px", "eps_static", "bias_init", "lambda_fus", "lambda_aux", "lambda_sof", "learning_rate",
          "beta1", "beta2", "adam_eps", "early_stop_min_delta", "lambda_mov", "gradcheck_rtol", "speed"}
_OPT_FLOAT = {"min_auc", "max_eer", "sigma"}
_BOOL = {"gcn_bias"}
_STR = {"segments"}
_PATHS = {name for name, f in FIELDS.items() if f.metadata.get("path")}


def _coerce(name: str, value):
    if name in _BOOL:
        if not isinstance(value, bool):
            raise FieldTypeError(f"{name}: expected true/false, got {value!r}")
        return value
    if name in _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise FieldTypeError(f"{name}: expected an integer, got {value!r}")
        return value
    if name in _FLOAT or name in _OPT_FLOAT:
        if value is None and name in _OPT_FLOAT:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FieldTypeError(f"{name}: expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise FieldRangeError(f"{name}: must be finite, got {value}")
        return value
    if name in _STR:
        if not isinstance(value, str):
            raise FieldTypeError(f"{name}: expected a string, got {value!r}")
        return value
    if name in _PATHS:
        if value is not None and not isinstance(value, str):
            raise FieldTypeError(f"{name}: expected a path string, got {value!r}")
        return value
    if name == "scale_factors":
        if not isinstance(value, (list, tuple)) or not value:
            raise FieldTypeError(f"scale_factors: expected a nonempty list of integers, got {value!r}")
        for s in value:
            if isinstance(s, bool) or not isinstance(s, int):
                raise FieldTypeError(f"scale_factors: expected integers, got {s!r}")
        return list(value)
    raise UnknownKeyError(f"unknown config key {name!r}")


def _require(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise FieldRangeError(f"{name}: {msg}")


def validate(cfg: RunConfig) -> None:
    for name in FIELDS:
        setattr(cfg, name, _coerce(name, getattr(cfg, name)))
    _require(cfg.m >= 2, "m", f"need at least 2 frames per snippet, got {cfg.m}")
    _require(cfg.tau >= 1, "tau", f"must be >= 1, got {cfg.tau}")
    _require(cfg.D >= 2, "D", f"need at least 2 direction sectors, got {cfg.D}")
    _require(all(s >= 1 for s in cfg.scale_factors), "scale_factors", f"each must be >= 1, got {cfg.scale_factors}")
    _require(len(set(cfg.scale_factors)) == len(cfg.scale_factors), "scale_factors",
             f"duplicates in {cfg.scale_factors}")
    _require(cfg.shoulder_px >= 1, "shoulder_px", f"must be >= 1, got {cfg.shoulder_px}")
    _require(cfg.eps_static >= 0, "eps_static", f"must be >= 0, got {cfg.eps_static}")
    _require(cfg.connectivity in (4, 8), "connectivity", f"must be 4 or 8, got {cfg.connectivity}")
    for name in ("hidden_dim", "embed_dim", "attn_dim", "batch_size", "epochs", "gradcheck_coords",
                 "width", "height", "turbulence_period", "turbulence_cell", "pulse_period"):
        _require(getattr(cfg, name) >= 1, name, f"must be >= 1, got {getattr(cfg, name)}")
    for name in ("lambda_fus", "lambda_aux", "lambda_sof", "early_stop_min_delta"):
        _require(getattr(cfg, name) >= 0, name, f"must be >= 0, got {getattr(cfg, name)}")
    _require(cfg.learning_rate > 0, "learning_rate", f"must be positive, got {cfg.learning_rate}")
    _require(0 <= cfg.beta1 < 1, "beta1", f"must be in [0, 1), got {cfg.beta1}")
    _require(0 <= cfg.beta2 < 1, "beta2", f"must be in [0, 1), got {cfg.beta2}")
    _require(cfg.adam_eps > 0, "adam_eps", f"must be positive, got {cfg.adam_eps}")
    _require(cfg.early_stop_patience >= 0, "early_stop_patience", "must be >= 0")
    _require(cfg.seed >= 0, "seed", f"must be >= 0, got {cfg.seed}")
    _require(cfg.synth_seed >= 0, "synth_seed", f"must be >= 0, got {cfg.synth_seed}")
    _require(0 < cfg.lambda_mov <= 1, "lambda_mov", f"must be in (0, 1], got {cfg.lambda_mov}")
    _require(cfg.gradcheck_rtol > 0, "gradcheck_rtol", "must be positive")
    _require(cfg.speed > 0, "speed", f"must be positive, got {cfg.speed}")
    if cfg.sigma is not None:
        _require(cfg.sigma >= 0, "sigma", f"must be >= 0, got {cfg.sigma}")
    if cfg.min_auc is not None:
        _require(0 <= cfg.min_auc <= 1, "min_auc", f"must be in [0, 1], got {cfg.min_auc}")
    if cfg.max_eer is not None:
        _require(0 <= cfg.max_eer <= 1, "max_eer", f"must be in [0, 1], got {cfg.max_eer}")
    try:
        segs = parse_segments(cfg.segments)
    except ValueError as exc:
        raise FieldRangeError(f"segments: {exc}") from None
    for s in segs:
        _require(s.frames >= cfg.m, "segments", f"{s.behaviour} lasts {s.frames} frames, fewer than m={cfg.m}")
        _require(s.behaviour in BEHAVIOURS, "segments", f"unknown behaviour {s.behaviour!r}")


def from_dict(values: dict) -> RunConfig:
    unknown = sorted(set(values) - set(FIELDS))
    if unknown:
        raise UnknownKeyError(f"unknown config key(s): {', '.join(unknown)}")
    return RunConfig(**values)


def load_file(path) -> dict:
    """Raw key/value pairs of a config file (validated later, after overrides)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        values = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: expected a JSON object of key/value pairs")
    for k, v in values.items():
        if isinstance(v, dict):
            raise FieldTypeError(f"{k}: config is flat, nested objects are not allowed")
    return values


# --------------------------------------------------------------------------
# command-line overrides


def flag_name(name: str) -> str:
    return "--" + name.replace("_", "-")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _parse_int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _parse_opt_float(text: str):
    if text.strip().lower() in ("none", "null", ""):
        return None
    return float(text)


def add_override_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (each replaces the config-file value)")
    for name, f in FIELDS.items():
        if name in _BOOL:
            kind, meta = _parse_bool, "BOOL"
        elif name in _INT:
            kind, meta = int, "INT"
        elif name in _FLOAT:
            kind, meta = float, "X"
        elif name in _OPT_FLOAT:
            kind, meta = _parse_opt_float, "X"
        elif name == "scale_factors":
            kind, meta = _parse_int_list, "S1,S2,..."
        else:
            kind, meta = str, "PATH" if name in _PATHS else "TEXT"
        default = f.default_factory() if f.default is dataclasses.MISSING else f.default
        group.add_argument(
            flag_name(name),
            dest=f"cfg_{name}",
            type=kind,
            metavar=meta,
            default=argparse.SUPPRESS,
            help=f"{f.metadata['help']} (default: {default})",
        )


def resolve(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the ``--config`` file, then flag overrides."""
    values = load_file(args.config) if getattr(args, "config", None) else {}
    for name in FIELDS:
        key = f"cfg_{name}"
        if hasattr(args, key):
            values[name] = getattr(args, key)
    return from_dict(values)
