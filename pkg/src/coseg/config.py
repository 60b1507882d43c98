"""Pipeline configuration: flat ``key=value`` files with camelCase keys."""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    gamma: float = 0.6
    tcs_count: int = 1500
    x_init: int = 40
    x_grow: int = 10
    y_large: int = 20
    y_small: int = 5
    y_cutoff: int = 40
    cluster_selection: str = "eigengap"
    color_weight: float = 2.0
    alpha1: float = 0.5
    alpha2: float = 1.0
    max_proposals_per_frame: int = 200
    trws_iters: int = 500
    trws_tol: float = 1e-6
    seed: int = 42
    threads: int = 0  # 0 = available parallelism
    # optical flow
    flow_levels: int = 3
    flow_iters: int = 100
    flow_smoothness: float = 15.0
    # superpixels
    tcs_compactness: float = 10.0
    tcs_iters: int = 10
    tcs_color_gate: float = 20.0
    # proposals
    ring_width: int = 4
    boundary_weight: float = 0.5
    contrast_weight: float = 0.5
    dedup_iou: float = 0.95
    surround_dilation: float = 0.2
    # warping
    warp_refine: bool = True
    warp_margin: int = 6
    warp_smoothness: float = 1.0
    # co-saliency and CRF
    saliency_clusters: int = 8
    pair_budget: int = 400
    # refinement
    refine_smoothness: float = 0.5
    refine_temporal: float = 0.3
    refine_prior_blend: float = 0.3
    refine_clusters: int = 8

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.tcs_count < 16:
            raise ConfigError("tcsCount must be at least 16")
        positive = ("x_init", "y_large", "y_small", "max_proposals_per_frame", "trws_iters",
                    "flow_levels", "flow_iters", "tcs_iters", "saliency_clusters", "pair_budget",
                    "refine_clusters", "ring_width")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{camel(name)} must be at least 1")
        non_negative = ("x_grow", "y_cutoff", "alpha1", "alpha2", "trws_tol", "threads",
                        "boundary_weight", "contrast_weight", "surround_dilation", "warp_margin",
                        "warp_smoothness", "refine_smoothness", "refine_temporal")
        for name in non_negative:
            if getattr(self, name) < 0:
                raise ConfigError(f"{camel(name)} must be non-negative")
        if self.color_weight <= 0:
            raise ConfigError("colorWeight must be positive")
        if not 0.0 <= self.refine_prior_blend <= 1.0:
            raise ConfigError("refinePriorBlend must lie in [0, 1]")
        if not 0.0 < self.dedup_iou <= 1.0:
            raise ConfigError("dedupIou must lie in (0, 1]")
        if self.cluster_selection not in ("eigengap", "fixed"):
            raise ConfigError("clusterSelection must be 'eigengap' or 'fixed'")

    def to_dict(self):
        return {camel(f.name): getattr(self, f.name) for f in dataclasses.fields(self)}

    def updated(self, overrides):
        """Copy with camelCase (or snake_case) overrides applied, values parsed from strings."""
        fields = {f.name: f for f in dataclasses.fields(self)}
        values = dataclasses.asdict(self)
        for key, raw in overrides.items():
            name = snake(key)
            if name not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            values[name] = _coerce(type(getattr(self, name)), raw, key)
        return PipelineConfig(**values)

    @classmethod
    def load(cls, path=None, overrides=None):
        cfg = cls()
        if path is not None:
            cfg = cfg.updated(parse_config(Path(path).read_text()))
        if overrides:
            cfg = cfg.updated(overrides)
        return cfg

    def dump(self, path):
        lines = [f"{k}={_render(v)}" for k, v in self.to_dict().items()]
        Path(path).write_text("\n".join(lines) + "\n")


def camel(name):
    head, *rest = name.split("_")
    return head + "".join(p.capitalize() for p in rest)


def snake(name):
    return re.sub(r"(?<=[a-z0-9])([A-Z])", r"_\1", name).lower()


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(kind, raw, key):
    if not isinstance(raw, str):
        raw = _render(raw)
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
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text):
    """``key=value`` lines; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
