"""Run configuration: defaults, key=value config files, overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

EXPERTISE_MODES = ("stats", "latent", "uniform")
KNOWLEDGE_SOURCES = ("boundary", "file")


@dataclass(frozen=True)
class FusionConfig:
    """All tunables of the fusion pipeline, with their default values.

    The defaults are the recommended operating point: 400 superpixels,
    3 boundary color clusters, affinity bandwidth 0.25, 5 propagation
    iterations, 5 update generations, and a 0.1 foreground threshold
    for the statistics-based expertise.
    """

    n_superpixels: int = 400
    slic_compactness: float = 10.0
    slic_iters: int = 10
    kmeans_clusters: int = 3
    theta: float = 0.25
    propagation_iters: int = 5
    generations: int = 5
    foreground_lambda: float = 0.1
    alpha_thresholds: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    logit_clamp: float = 1e-4
    smoothing: float = 1e-6
    mode: str = "stats"
    knowledge: str = "boundary"
    seed: int = 0
    em_max_rounds: int = 50
    em_tol: float = 1e-6
    em_inner_steps: int = 25
    em_step_size: float = 0.1
    em_prior_mean: float = 1.0
    em_prior_std: float = 1.0
    convergence_tol: float = 0.01
    fmeasure_beta2: float = 0.3

    def validate(self) -> "FusionConfig":
        if self.n_superpixels < 2:
            raise ConfigError("n_superpixels must be >= 2")
        if self.slic_compactness <= 0 or self.slic_iters < 1:
            raise ConfigError("slic parameters must be positive")
        if self.kmeans_clusters < 1:
            raise ConfigError("kmeans_clusters must be >= 1")
        if self.theta <= 0:
            raise ConfigError("theta must be positive")
        if self.propagation_iters < 0:
            raise ConfigError("propagation_iters must be >= 0")
        # generations = 0 is the documented degenerate setup that reduces
        # fusion to the plain candidate average.
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if not 0 < self.foreground_lambda < 1:
            raise ConfigError("foreground_lambda must be in (0, 1)")
        if not self.alpha_thresholds or any(
            not 0 < t < 1 for t in self.alpha_thresholds
        ):
            raise ConfigError("alpha_thresholds must lie in (0, 1)")
        if not 0 < self.logit_clamp < 0.5:
            raise ConfigError("logit_clamp must be in (0, 0.5)")
        if self.smoothing <= 0:
            raise ConfigError("smoothing must be positive")
        if self.mode not in EXPERTISE_MODES:
            raise ConfigError(f"mode must be one of {EXPERTISE_MODES}")
        if self.knowledge not in KNOWLEDGE_SOURCES:
            raise ConfigError(f"knowledge must be one of {KNOWLEDGE_SOURCES}")
        if self.em_max_rounds < 1 or self.em_inner_steps < 1:
            raise ConfigError("EM iteration counts must be >= 1")
        if self.em_tol <= 0 or self.em_step_size <= 0 or self.em_prior_std <= 0:
            raise ConfigError("EM tolerances and step sizes must be positive")
        if self.convergence_tol <= 0 or self.fmeasure_beta2 <= 0:
            raise ConfigError("tolerances must be positive")
        return self

    def replace(self, **updates) -> "FusionConfig":
        return dataclasses.replace(self, **updates).validate()

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "FusionConfig":
        """Build a config from string key=value pairs, coercing types."""
        return cls().with_string_overrides(mapping)

    def with_string_overrides(self, mapping: dict[str, str]) -> "FusionConfig":
        fields = {f.name: f for f in dataclasses.fields(self)}
        updates = {}
        for key, raw in mapping.items():
            if key not in fields:
                raise ConfigError(f"unknown config key: {key!r}")
            updates[key] = _coerce(key, raw, getattr(self, key))
        return self.replace(**updates)

    @classmethod
    def from_file(cls, path: str | Path) -> "FusionConfig":
        return cls().apply_file(path)

    def apply_file(self, path: str | Path) -> "FusionConfig":
        """Apply a plain-text ``key=value`` config file on top of self."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        mapping = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = stripped.partition("=")
            mapping[key.strip()] = value.strip()
        return self.with_string_overrides(mapping)

    def as_items(self) -> list[tuple[str, str]]:
        """Stable (key, printable value) pairs, e.g. for the defaults dump."""
        items = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                printable = ",".join(f"{v:g}" for v in value)
            else:
                printable = f"{value}"
            items.append((f.name, printable))
        return items


def _coerce(key: str, raw: str, current):
    try:
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(float(part) for part in raw.split(",") if part.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
