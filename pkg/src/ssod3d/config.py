"""
Configuration objects and the JSON experiment loader.

An experiment file is one JSON document with the sections ``classes``,
``thresholds``, ``noise``, ``scheme``, ``sampler``, ``scenes`` and ``seeds``
(plus optional top-level scalars). Every section is optional; omitted keys
take the defaults defined on the dataclasses below. Unknown keys are an
error so typos never silently fall back to a default.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

__all__ = [
    "ConfigError",
    "ClassConfig",
    "NoiseModel",
    "SamplerConfig",
    "SceneConfig",
    "SeedConfig",
    "ExperimentConfig",
    "load_config",
    "parse_config",
]

CAR, PEDESTRIAN, CYCLIST = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path, ``line`` a 1-based line if known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


def _per_class(value, n: int, name: str) -> tuple:
    if isinstance(value, (int, float)):
        return (float(value),) * n
    value = tuple(float(v) for v in value)
    if len(value) != n:
        raise ConfigError(f"expected {n} per-class values, got {len(value)}", name)
    return value


@dataclass(frozen=True)
class ClassConfig:
    """Per-class thresholds and size priors.

    ``pl_threshold`` filters teacher detections, ``fg_threshold`` and the
    shared ``bg_threshold`` split proposals into FG/UC/BG, and
    ``eval_threshold`` is the IoU above which a proposal counts as a true
    object when measuring assignment errors and AP.
    """

    names: tuple = ("Car", "Pedestrian", "Cyclist")
    pl_threshold: tuple = (0.95, 0.85, 0.85)
    fg_threshold: tuple = (0.65, 0.45, 0.40)
    bg_threshold: float = 0.25
    eval_threshold: tuple = (0.7, 0.5, 0.5)
    size_prior: tuple = ((3.9, 1.6, 1.56), (0.8, 0.6, 1.73), (1.76, 0.6, 1.73))

    def __post_init__(self):
        n = len(self.names)
        object.__setattr__(self, "names", tuple(str(s) for s in self.names))
        for name in ("pl_threshold", "fg_threshold", "eval_threshold"):
            object.__setattr__(self, name, _per_class(getattr(self, name), n, name))
        object.__setattr__(self, "bg_threshold", float(self.bg_threshold))
        prior = tuple(tuple(float(x) for x in p) for p in self.size_prior)
        if len(prior) != n or any(len(p) != 3 for p in prior):
            raise ConfigError(f"expected {n} size priors of 3 values", "size_prior")
        if any(x <= 0 for p in prior for x in p):
            raise ConfigError("size priors must be positive", "size_prior")
        object.__setattr__(self, "size_prior", prior)
        self.validate()

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def validate(self):
        if not 0.0 <= self.bg_threshold < 1.0:
            raise ConfigError("must lie in [0, 1)", "bg_threshold")
        for name in ("pl_threshold", "fg_threshold", "eval_threshold"):
            for c, v in enumerate(getattr(self, name)):
                if not 0.0 <= v <= 1.0:
                    raise ConfigError(f"must lie in [0, 1], got {v}", f"{name}[{c}]")
        for c, fg in enumerate(self.fg_threshold):
            if not self.bg_threshold < fg:
                raise ConfigError(
                    f"background threshold {self.bg_threshold} must be below foreground threshold {fg}",
                    f"fg_threshold[{c}]",
                )

    def check_class(self, class_id: int) -> None:
        if not 0 <= int(class_id) < self.num_classes:
            raise ValueError(f"unknown class_id {class_id} (known: 0..{self.num_classes - 1})")

    def with_fg(self, fg) -> "ClassConfig":
        return replace(self, fg_threshold=_per_class(fg, self.num_classes, "fg_threshold"))


@dataclass(frozen=True)
class NoiseModel:
    """Corruption applied to ground truths when simulating teacher and student outputs.

    Jitter scales may be given per class (a sequence) or shared (a scalar).
    ``fp_rate`` is the Poisson mean of spurious pseudo-labels per scene.
    ``teacher_pull`` / ``student_pull`` move a proposal toward its best
    ground truth before scoring; ``teacher_bias`` shifts teacher scores per
    class (negative values mimic a background-biased teacher).
    """

    center_xy: Any = 0.0
    center_z: Any = 0.0
    log_size: Any = 0.0
    yaw: Any = 0.0
    miss_prob: Any = 0.0
    fp_rate: float = 0.0
    score_sigma: float = 0.0
    teacher_pull: float = 1.0
    teacher_sigma: float = 0.0
    teacher_bias: Any = 0.0
    teacher_jitter: float = 0.0
    student_pull: float = 1.0
    student_sigma: float = 0.0

    def resolved(self, n: int) -> "NoiseModel":
        """Copy with every per-class field expanded to an ``n``-tuple and validated."""
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in _PER_CLASS_NOISE:
                v = _per_class(v, n, f"noise.{f.name}")
            else:
                v = float(v)
            kw[f.name] = v
        out = NoiseModel(**kw)
        for f in fields(out):
            vals = getattr(out, f.name)
            vals = vals if isinstance(vals, tuple) else (vals,)
            for v in vals:
                if not math.isfinite(v):
                    raise ConfigError("must be finite", f"noise.{f.name}")
                if f.name != "teacher_bias" and v < 0:
                    raise ConfigError(f"must be non-negative, got {v}", f"noise.{f.name}")
                if f.name in ("miss_prob", "teacher_pull", "student_pull") and v > 1:
                    raise ConfigError(f"must lie in [0, 1], got {v}", f"noise.{f.name}")
        return out


_PER_CLASS_NOISE = {"center_xy", "center_z", "log_size", "yaw", "miss_prob", "teacher_bias"}


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "topk"
    k: int = 128
    fg_fraction: float = 0.5
    easy_bg_fraction: float = 0.2
    easy_bg_iou: float = 0.1

    def __post_init__(self):
        if self.kind not in ("topk", "balanced"):
            raise ConfigError(f"must be 'topk' or 'balanced', got {self.kind!r}", "sampler.kind")
        if int(self.k) < 1:
            raise ConfigError("must be >= 1", "sampler.k")
        for name in ("fg_fraction", "easy_bg_fraction", "easy_bg_iou"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("must lie in [0, 1]", f"sampler.{name}")


@dataclass(frozen=True)
class SceneConfig:
    """Scene layout and proposal generation.

    ``ladder`` lists relative jitter scales; each ground truth receives
    ``proposals_per_level`` proposals at every scale.
    """

    count: int = 200
    labeled: int = 0
    objects: tuple = (6, 2, 1)
    proposals_per_level: int = 5
    ladder: tuple = (0.02, 0.06, 0.15, 0.35)
    background_proposals: int = 100
    proposal_nms: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(int(x) for x in self.objects))
        object.__setattr__(self, "ladder", tuple(float(x) for x in self.ladder))
        for name in ("count", "labeled", "proposals_per_level", "background_proposals"):
            if int(getattr(self, name)) < 0:
                raise ConfigError("must be >= 0", f"scenes.{name}")
        if any(x < 0 for x in self.objects):
            raise ConfigError("object counts must be >= 0", "scenes.objects")
        if any(x < 0 for x in self.ladder):
            raise ConfigError("ladder scales must be >= 0", "scenes.ladder")


@dataclass(frozen=True)
class SeedConfig:
    base: int = 0
    count: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    classes: ClassConfig = field(default_factory=ClassConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    scheme: str = "UC_FP+BG"
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    scenes: SceneConfig = field(default_factory=SceneConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    lambda_u: float = 1.0
    iou_mode: str = "3d"
    ema_momentum: float = 0.999
    rng: str = "philox"

    def __post_init__(self):
        from .reliability import SCHEMES

        if len(self.scenes.objects) != self.classes.num_classes:
            raise ConfigError(
                f"expected {self.classes.num_classes} per-class counts", "scenes.objects"
            )
        object.__setattr__(self, "noise", self.noise.resolved(self.classes.num_classes))
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}", "scheme")
        if self.iou_mode not in ("3d", "bev"):
            raise ConfigError("must be '3d' or 'bev'", "iou_mode")
        if self.lambda_u < 0:
            raise ConfigError("must be >= 0", "lambda_u")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ConfigError("must lie in [0, 1]", "ema_momentum")
        if self.rng != "philox":
            raise ConfigError("only 'philox' is supported", "rng")

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "classes": ClassConfig,
    "thresholds": None,  # merged into ClassConfig
    "noise": NoiseModel,
    "sampler": SamplerConfig,
    "scenes": SceneConfig,
    "seeds": SeedConfig,
}
_THRESHOLD_KEYS = {
    "pl": "pl_threshold",
    "fg": "fg_threshold",
    "bg": "bg_threshold",
    "eval": "eval_threshold",
}
_TOP_LEVEL = {"scheme", "lambda_u", "iou_mode", "ema_momentum", "rng"}


def _line_of(text: str | None, key: str) -> int | None:
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _build(cls, data: dict, section: str, text: str | None):
    if not isinstance(data, dict):
        raise ConfigError("expected a JSON object", section, _line_of(text, section))
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key (known: {sorted(known)})", f"{section}.{key}", _line_of(text, key))
    try:
        return cls(**data)
    except ConfigError as exc:
        name = exc.field or section
        if not name.startswith(section + ".") and section != "":
            name = f"{section}.{name}"
        raise ConfigError(str(exc).split(": ", 1)[-1], name, _line_of(text, name.split(".")[-1].split("[")[0])) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), section, _line_of(text, section)) from None


def parse_config(data: dict, text: str | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a decoded JSON document."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object")
    for key in data:
        if key not in _SECTIONS and key not in _TOP_LEVEL:
            raise ConfigError("unknown section", key, _line_of(text, key))

    class_kw = dict(data.get("classes", {}))
    for key, value in dict(data.get("thresholds", {})).items():
        if key not in _THRESHOLD_KEYS:
            raise ConfigError(f"unknown key (known: {sorted(_THRESHOLD_KEYS)})", f"thresholds.{key}", _line_of(text, key))
        class_kw[_THRESHOLD_KEYS[key]] = value
    kw: dict[str, Any] = {"classes": _build(ClassConfig, class_kw, "classes", text)}
    for section in ("noise", "sampler", "scenes", "seeds"):
        if section in data:
            kw[section] = _build(_SECTIONS[section], data[section], section, text)
    for key in _TOP_LEVEL:
        if key in data:
            kw[key] = data[key]
    try:
        return ExperimentConfig(**kw)
    except ConfigError as exc:
        key = (exc.field or "").split(".")[-1].split("[")[0]
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.field, _line_of(text, key)) from None


def load_config(path) -> ExperimentConfig:
    """Read and validate an experiment JSON file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg}, column {exc.colno})", line=exc.lineno) from None
    return parse_config(data, text)
