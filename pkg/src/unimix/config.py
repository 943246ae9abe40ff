"""Run configuration: nested dataclasses backed by an INI-style text file.

Every key has a default; the full-schedule training values are used where they
exist (lr 0.001, batch 4, 10 warm-up epochs, 10 + 50 adaptation epochs,
fog coefficient sets, precipitation rate 0.5, half-range mixing intervals).
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

LIGHT_FOG_ALPHAS = (0.005, 0.01, 0.02, 0.03, 0.06)
DENSE_FOG_ALPHAS = (0.1, 0.12, 0.15, 0.2)
WEATHER_KINDS = ("clear", "light_fog", "dense_fog", "rain", "snow")
MIX_KINDS = ("spatial", "intensity", "semantic")
OPERATOR_POLICIES = ("uniform_choice", "compose_all") + tuple(
    f"fixed:{k}" for k in MIX_KINDS
)


class ConfigError(ValueError):
    pass


@dataclass
class MixConfig:
    delta_rho_frac: float = 0.5
    delta_theta: float = math.pi
    delta_z_frac: float = 0.5
    delta_I_frac: float = 0.5
    class_select_prob: float = 0.5
    operator_policy: str = "uniform_choice"

    def validate(self):
        for name in ("delta_rho_frac", "delta_z_frac", "delta_I_frac"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"mixing.{name} must be in (0, 1], got {v}")
        if not 0.0 < self.delta_theta <= 2 * math.pi:
            raise ConfigError(f"mixing.delta_theta must be in (0, 2pi], got {self.delta_theta}")
        if not 0.0 < self.class_select_prob < 1.0:
            raise ConfigError("mixing.class_select_prob must be in (0, 1)")
        if self.operator_policy not in OPERATOR_POLICIES:
            raise ConfigError(
                f"mixing.operator_policy must be one of {OPERATOR_POLICIES}, "
                f"got {self.operator_policy!r}"
            )


@dataclass
class WeatherConfig:
    # composition weights over weather kinds for the bridge domain
    w_clear: float = 0.0
    w_light_fog: float = 1.0
    w_dense_fog: float = 1.0
    w_rain: float = 1.0
    w_snow: float = 1.0
    precipitation_rate: float = 0.5
    noise_floor: float = 0.03
    beta_soft: float = 0.15
    r_min: float = 1.5
    alpha_rain: float = 0.002
    alpha_snow: float = 0.004
    k_rain: float = 0.0005
    k_snow: float = 0.002
    wet_reflectance: float = 0.6
    wet_drop_prob: float = 0.3
    wet_ground_kinds: str = "rain,snow"
    ground_ids: str = "1"
    scatter_label: str = "ignore"
    drop_lost: bool = True

    def composition(self) -> dict:
        return {k: getattr(self, f"w_{k}") for k in WEATHER_KINDS}

    def ground_id_set(self) -> frozenset:
        return frozenset(int(s) for s in self.ground_ids.split(",") if s.strip())

    def wet_kinds(self) -> frozenset:
        return frozenset(s.strip() for s in self.wet_ground_kinds.split(",") if s.strip())

    def validate(self):
        comp = self.composition()
        if any(w < 0 for w in comp.values()) or sum(comp.values()) <= 0:
            raise ConfigError("weather composition weights must be >= 0 with a positive sum")
        if not 0.0 <= self.noise_floor < 1.0:
            raise ConfigError("weather.noise_floor must be in [0, 1)")
        if not 0.0 <= self.beta_soft <= 1.0:
            raise ConfigError("weather.beta_soft must be in [0, 1]")
        if self.r_min <= 0:
            raise ConfigError("weather.r_min must be positive")
        if self.scatter_label not in ("ignore", "keep"):
            raise ConfigError("weather.scatter_label must be 'ignore' or 'keep'")
        if not 0.0 < self.wet_reflectance <= 1.0 or not 0.0 <= self.wet_drop_prob <= 1.0:
            raise ConfigError("wet-ground factors out of range")


@dataclass
class TrainConfig:
    seed: int = 0
    warmup_epochs: int = 10
    epochs_stage1: int = 10
    epochs_stage2: int = 50
    batch_size: int = 4
    lr: float = 0.001
    ema_decay: float = 0.99
    bridge_labels: str = "teacher"
    regenerate_bridge: bool = True
    use_bridge: bool = True
    conf_threshold: float = 0.0

    def validate(self):
        for name in ("warmup_epochs", "epochs_stage1", "epochs_stage2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError("train.ema_decay must be in [0, 1]")
        if self.bridge_labels not in ("teacher", "ground_truth"):
            raise ConfigError("train.bridge_labels must be 'teacher' or 'ground_truth'")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ConfigError("train.conf_threshold must be in [0, 1]")


@dataclass
class ModelConfig:
    hidden1: int = 64
    hidden2: int = 64
    num_classes: int = 6
    ignore_id: int = 0

    def validate(self):
        if self.hidden1 < 1 or self.hidden2 < 1 or self.num_classes < 2:
            raise ConfigError("model sizes must be positive and num_classes >= 2")


@dataclass
class SynthConfig:
    count: int = 100
    points: int = 2000
    target_alpha: float = 0.12

    def validate(self):
        if self.count < 0 or self.points < 1:
            raise ConfigError("synth.count must be >= 0 and synth.points >= 1")


@dataclass
class PathsConfig:
    source: str = ""
    target: str = ""
    out_dir: str = "out"
    remap: str = "identity"


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    mixing: MixConfig = field(default_factory=MixConfig)
    weather: WeatherConfig = field(default_factory=WeatherConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> "RunConfig":
        for f in fields(self):
            section = getattr(self, f.name)
            if hasattr(section, "validate"):
                section.validate()
        return self

    @classmethod
    def desk(cls, seed: int = 0) -> "RunConfig":
        """Scaled-down preset that trains in well under a minute on 100 small scans."""
        cfg = cls()
        cfg.train = replace(
            cfg.train, seed=seed, warmup_epochs=3, epochs_stage1=3, epochs_stage2=5, lr=0.5
        )
        return cfg

    # -- text round trip --------------------------------------------------

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for f in fields(self):
            section = getattr(self, f.name)
            parser[f.name] = {sf.name: _fmt(getattr(section, sf.name)) for sf in fields(section)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser()
        parser.optionxform = str
        parser.read_string(text)
        cfg = cls()
        for name in parser.sections():
            if not hasattr(cfg, name):
                raise ConfigError(f"unknown config section [{name}]")
            section = getattr(cfg, name)
            known = {sf.name: sf for sf in fields(section)}
            for key, raw in parser[name].items():
                if key not in known:
                    raise ConfigError(f"unknown config key {name}.{key}")
                setattr(section, key, _parse(raw, type(getattr(section, key)), f"{name}.{key}"))
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_ini(Path(path).read_text(encoding="utf-8"))

    def set(self, dotted: str, raw: str) -> None:
        """Override one ``section.key`` from a string, e.g. ``train.lr=0.1``."""
        try:
            name, key = dotted.split(".", 1)
            section = getattr(self, name)
            current = getattr(section, key)
        except (ValueError, AttributeError):
            raise ConfigError(f"unknown config key {dotted}") from None
        setattr(section, key, _parse(raw, type(current), dotted))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, kind, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw
