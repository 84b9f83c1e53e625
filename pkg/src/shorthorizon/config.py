"""JSON pipeline configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .evaluation import ExperimentConfig, FeatureSet
from .horizon import ClockMode, HorizonSpec
from .models import Family, Selection
from .synthgen import CohortConfig

DEFAULT_HORIZONS = (1, 2, 3, 4, 5, 12, "full")
KNOWN_KEYS = {
    "events", "outcomes", "synthetic", "schema", "clock_mode", "horizons", "families", "grids",
    "selection", "feature_sets", "k", "seed", "patterns", "normalize_scope", "on_track", "output", "jobs",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    raw: Mapping[str, Any]
    base_dir: Path
    events: Path | None
    outcomes: Path | None
    synthetic: CohortConfig | None
    schema: Mapping[str, str]
    clock_mode: ClockMode
    horizons: tuple[HorizonSpec, ...]
    families: tuple[Family, ...]
    grids: Mapping[str, Mapping[str, Any]]
    selection: Selection
    feature_sets: tuple[FeatureSet, ...]
    k: int
    seed: int
    min_support: float
    top_k: int
    alpha: float
    normalize_scope: str
    level_cuts: tuple[float, ...] | None
    output: Path
    jobs: int = 1
    overrides: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir: str | Path = ".") -> "PipelineConfig":
        unknown = set(raw) - KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = Path(base_dir)

        def path(key: str) -> Path | None:
            value = raw.get(key)
            if value is None:
                return None
            p = Path(value)
            return p if p.is_absolute() else base / p

        try:
            seed = int(raw.get("seed", 0))
            synthetic = None
            if raw.get("synthetic") is not None:
                synth = dict(raw["synthetic"])
                synth.setdefault("seed", seed)
                synthetic = CohortConfig.from_dict(synth)
            events, outcomes = path("events"), path("outcomes")
            if synthetic is None and (events is None or outcomes is None):
                raise ConfigError("config needs events+outcomes paths or a synthetic section")
            mode = ClockMode(raw.get("clock_mode", ClockMode.SESSION_WALL_CLOCK.value))
            horizons = tuple(HorizonSpec.parse(h, mode) for h in raw.get("horizons", DEFAULT_HORIZONS))
            if not horizons:
                raise ConfigError("horizon grid is empty")
            families = tuple(Family(f) for f in raw.get("families", [f.value for f in Family]))
            pat = dict(raw.get("patterns", {}))
            on_track = raw.get("on_track")
            level_cuts = None
            if on_track is not None:
                level_cuts = tuple(float(c) for c in on_track["level_cuts"])
            elif synthetic is not None:
                level_cuts = tuple(synthetic.level_cuts)
            scope = raw.get("normalize_scope", "train_fold")
            if scope not in ("global", "train_fold"):
                raise ConfigError(f"normalize_scope must be global or train_fold, not {scope!r}")
            return cls(
                raw=dict(raw),
                base_dir=base,
                events=events,
                outcomes=outcomes,
                synthetic=synthetic,
                schema=dict(raw.get("schema", {})),
                clock_mode=mode,
                horizons=horizons,
                families=families,
                grids={k: dict(v) for k, v in raw.get("grids", {}).items()},
                selection=Selection(raw.get("selection", Selection.NESTED.value)),
                feature_sets=tuple(FeatureSet.parse(f) for f in raw.get("feature_sets", ["short"])),
                k=int(raw.get("k", 5)),
                seed=seed,
                min_support=float(pat.get("min_support", 0.2)),
                top_k=int(pat.get("top_k", 10)),
                alpha=float(pat.get("alpha", 0.05)),
                normalize_scope=scope,
                level_cuts=level_cuts,
                output=path("output") or base / "output",
                jobs=int(raw.get("jobs", 1)),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        p = Path(path)
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw, p.parent)

    def with_overrides(self, *, seed: int | None = None, jobs: int | None = None,
                       output: str | Path | None = None) -> "PipelineConfig":
        """Apply command-line overrides; a new seed also reseeds a synthetic cohort that had none."""
        raw = dict(self.raw)
        if seed is not None:
            raw["seed"] = seed
        if jobs is not None:
            raw["jobs"] = jobs
        if output is not None:
            raw["output"] = str(Path(output).resolve())
        cfg = PipelineConfig.from_dict(raw, self.base_dir)
        return replace(cfg, overrides={"seed": seed, "jobs": jobs, "output": output})

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            horizons=self.horizons, families=self.families, grids=self.grids, selection=self.selection,
            feature_sets=self.feature_sets, k=self.k, seed=self.seed, min_support=self.min_support,
            top_k=self.top_k, alpha=self.alpha, normalize_scope=self.normalize_scope,
            level_cuts=self.level_cuts, jobs=self.jobs,
        )

    def content_hash(self) -> str:
        """Hash of everything that determines results; ``jobs`` and ``output`` are excluded."""
        raw = {k: v for k, v in self.raw.items() if k not in ("jobs", "output")}
        blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
