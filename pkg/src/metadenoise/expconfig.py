"""Plain-text experiment configuration: `section.key = value` lines.

Unknown keys are rejected outright, and every path is resolved relative to
the directory holding the config file.  Lines starting with '#' and blank
lines are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .adaptation import AdaptConfig, MetaConfig, PretrainConfig
from .errors import DataError
from .imaging import ScalePolicy
from .nn import Arch


def parse_scale_policy(text: str) -> ScalePolicy:
    """'fixed:S', 'gaussian:MU,SD,LO,HI', or a bare number (fixed)."""
    text = text.strip()
    if text.startswith("fixed:"):
        return ScalePolicy.fixed(float(text[6:]))
    if text.startswith("gaussian:"):
        parts = [float(p) for p in text[9:].split(",")]
        if len(parts) != 4:
            raise DataError(f"gaussian scale policy needs mu,sd,lo,hi: {text!r}")
        return ScalePolicy.gaussian_clipped(*parts)
    try:
        return ScalePolicy.fixed(float(text))
    except ValueError:
        raise DataError(f"cannot parse scale policy {text!r}") from None


@dataclass
class ExperimentExtras:
    """Knobs consumed only by the named experiments."""

    images: int = 10
    rounds: int = 20
    sigma255: float = 20.0
    scales: list = field(default_factory=lambda: [0.4, 0.6, 0.8, 1.0, 1.2])
    patch_large: int = 128
    patch_small: int = 64
    trials: int = 10000


@dataclass
class ExperimentConfig:
    seed: int = 0
    arch: Arch = field(default_factory=Arch)
    train_dir: Path | None = None
    eval_dir: Path | None = None
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    meta_eval_every: int = 0
    meta_eval_sigma255: float = 20.0
    adapt: AdaptConfig = field(default_factory=lambda: AdaptConfig(rounds=20))
    experiment: ExperimentExtras = field(default_factory=ExperimentExtras)


def _to_bool(v):
    if v.lower() in ("true", "on", "yes", "1"):
        return True
    if v.lower() in ("false", "off", "no", "0"):
        return False
    raise DataError(f"expected a boolean, got {v!r}")


def _to_float_list(v):
    return [float(p) for p in v.split(",") if p.strip()]


# key -> (target object name, attribute, converter)
_KEYS = {
    "seed": ("", "seed", int),
    "arch.depth": ("arch", "depth", int),
    "arch.width": ("arch", "width", int),
    "arch.kernel": ("arch", "kernel", int),
    "arch.channels": ("arch", "channels", int),
    "data.train_dir": ("", "train_dir", "path"),
    "data.eval_dir": ("", "eval_dir", "path"),
    "pretrain.steps": ("pretrain", "steps", int),
    "pretrain.sigma_max255": ("pretrain", "sigma_max255", float),
    "pretrain.patch_size": ("pretrain", "patch_size", int),
    "pretrain.batch_size": ("pretrain", "batch_size", int),
    "pretrain.augment": ("pretrain", "augment", _to_bool),
    "pretrain.lr": ("pretrain", "lr", float),
    "meta.outer_iters": ("meta", "outer_iters", int),
    "meta.inner_steps": ("meta", "inner_steps", int),
    "meta.epsilon": ("meta", "epsilon", float),
    "meta.sigma_max255": ("meta", "sigma_max255", float),
    "meta.patch_size": ("meta", "patch_size", int),
    "meta.batch_size": ("meta", "batch_size", int),
    "meta.lr": ("meta", "lr", float),
    "meta.eval_every": ("", "meta_eval_every", int),
    "meta.eval_sigma255": ("", "meta_eval_sigma255", float),
    "adapt.rounds": ("adapt", "rounds", int),
    "adapt.mode": ("adapt", "mode", str),
    "adapt.sigma255": ("adapt", "sigma255", float),
    "adapt.sigma_max255": ("adapt", "sigma_max255", float),
    "adapt.inner_steps": ("adapt", "inner_steps", int),
    "adapt.epsilon": ("adapt", "epsilon_test", float),
    "adapt.loss": ("adapt", "loss", str),
    "adapt.lr": ("adapt", "lr", float),
    "adapt.scale": ("adapt", "scale_policy", parse_scale_policy),
    "experiment.images": ("experiment", "images", int),
    "experiment.rounds": ("experiment", "rounds", int),
    "experiment.sigma255": ("experiment", "sigma255", float),
    "experiment.scales": ("experiment", "scales", _to_float_list),
    "experiment.patch_large": ("experiment", "patch_large", int),
    "experiment.patch_small": ("experiment", "patch_small", int),
    "experiment.trials": ("experiment", "trials", int),
}


def load_config(path) -> ExperimentConfig:
    """Parse a key=value config file into an ExperimentConfig."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    base = path.resolve().parent
    raw = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise DataError(f"{path}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise DataError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()

    # Arch is frozen and validated in one shot, so collect its fields first.
    arch_kwargs = {}
    sections = {"": {}, "pretrain": {}, "meta": {}, "adapt": {},
                "experiment": {}}
    for key, value in raw.items():
        target, attr, conv = _KEYS[key]
        if conv == "path":
            parsed = (base / value).resolve()
        else:
            try:
                parsed = conv(value)
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}: bad value for {key}: {value!r} "
                                f"({exc})") from exc
        if target == "arch":
            arch_kwargs[attr] = parsed
        else:
            sections[target][attr] = parsed

    cfg = ExperimentConfig(arch=Arch(**arch_kwargs))
    for attr, value in sections[""].items():
        setattr(cfg, attr, value)
    for name in ("pretrain", "meta", "adapt", "experiment"):
        obj = getattr(cfg, name)
        for attr, value in sections[name].items():
            setattr(obj, attr, value)
        if hasattr(obj, "__post_init__"):
            obj.__post_init__()  # re-validate with the overridden values
    return cfg
