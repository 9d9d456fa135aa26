"""Sectioned ``key = value`` run configuration.

Sections mirror the module configs: ``[scene]``, ``[policy]``, ``[detector]``,
``[edit]``, ``[impedance]`` and ``[run]``.  Every key has a default; unknown
sections and keys are rejected by name.
"""

from __future__ import annotations

import configparser
import enum
from dataclasses import dataclass, field, fields
from pathlib import Path

from .alignment import AlignmentWeights
from .detector import DetectorConfig
from .editor import EditConfig, EditWeights
from .sim.episode import ControllerConfig
from .sim.policy import PolicyConfig
from .sim.scene import SceneConfig

RESOLVED_NAME = "resolved_config.ini"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    edit: EditConfig = field(default_factory=EditConfig)
    alignment: AlignmentWeights = field(default_factory=AlignmentWeights)
    impedance: ControllerConfig = field(default_factory=ControllerConfig)
    post_match_weight_q: float = 0.5
    seed: int = 0
    output_dir: str = "out"
    workers: int = 1


# flat key views of the nested objects, per section
def _edit_items(cfg: RunConfig) -> dict:
    e = cfg.edit
    out = {f.name: getattr(e.weights, f.name) for f in fields(EditWeights)}
    out.update(n_points=e.n_points, hard_endpoint=e.hard_endpoint, max_iters=e.max_iters,
               grad_tol=e.grad_tol, smoothness=e.smoothness, omega_p=cfg.alignment.omega_p,
               omega_q=cfg.alignment.omega_q, post_match_weight_q=cfg.post_match_weight_q)
    return out


def _items(cfg: RunConfig) -> dict:
    def flat(obj):
        return {f.name: getattr(obj, f.name) for f in fields(obj)}

    return {
        "scene": flat(cfg.scene),
        "policy": flat(cfg.policy),
        "detector": flat(cfg.detector),
        "edit": _edit_items(cfg),
        "impedance": flat(cfg.impedance),
        "run": {"seed": cfg.seed, "output_dir": cfg.output_dir, "workers": cfg.workers},
    }


def _to_text(v) -> str:
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_to_text(x) for x in v)
    return str(v)


def _coerce(text: str, default, section: str, key: str):
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [float(x) for x in text.split(",")]
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} comma-separated numbers")
            return tuple(parts)
        if isinstance(default, enum.Enum):
            return type(default)(text.strip())
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: invalid value {text!r} ({exc})") from None


def to_ini(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for section, items in _items(cfg).items():
        cp[section] = {k: _to_text(v) for k, v in items.items()}
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in cp[section].items()]
        lines.append("")
    return "\n".join(lines)


def from_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    defaults = _items(base)
    values = {s: dict(v) for s, v in defaults.items()}
    for section in cp.sections():
        if section not in defaults:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp[section].items():
            if key not in defaults[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[section][key] = _coerce(raw, defaults[section][key], section, key)
    return build(values)


def build(values: dict) -> RunConfig:
    """Assemble a :class:`RunConfig` from per-section flat dicts."""
    try:
        e = dict(values["edit"])
        weights = EditWeights(**{f.name: e.pop(f.name) for f in fields(EditWeights)})
        alignment = AlignmentWeights(e.pop("omega_p"), e.pop("omega_q"))
        post_q = e.pop("post_match_weight_q")
        if post_q < 0.0:
            raise ValueError("post_match_weight_q must be nonnegative")
        run = values["run"]
        if run["workers"] < 1:
            raise ValueError("workers must be >= 1")
        return RunConfig(
            scene=SceneConfig(**values["scene"]),
            policy=PolicyConfig(**values["policy"]),
            detector=DetectorConfig(**values["detector"]),
            edit=EditConfig(weights=weights, **e),
            alignment=alignment,
            impedance=ControllerConfig(**values["impedance"]),
            post_match_weight_q=post_q,
            seed=run["seed"], output_dir=run["output_dir"], workers=run["workers"],
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    return from_ini(p.read_text())


def write_resolved(cfg: RunConfig, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = d / RESOLVED_NAME
    out.write_text(to_ini(cfg))
    return out


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Override flat keys per section, e.g. ``with_overrides(cfg, edit={"n_points": 10})``."""
    values = _items(cfg)
    for section, kv in sections.items():
        for k, v in kv.items():
            if k not in values[section]:
                raise ConfigError(f"unknown key {k!r} in section [{section}]")
            values[section][k] = v
    return build(values)
