"""
Pipeline Configuration
======================

Process settings from the environment (optionally a .env file) and run
configs resolved against their file location with command-line overrides.

Usage:
    from pipeline_config import configure_logging, get_settings, load_run_config

    configure_logging(get_settings().log_level)
    run = load_run_config("config.json", seed=7, jobs=4)
    spec = run.dataset_spec()
"""

import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import find_dotenv, load_dotenv
from pydantic import ValidationError

from errors import ConfigurationError, DocumentFormatError, from_validation_error
from pydantic_models import (
    BackgroundEntry,
    CameraModel,
    DatasetSpec,
    IdentityEntry,
    ReferenceEntry,
    RunConfig,
)
from pose_sequence import ACTION_CLASS_SETS
from splat_renderer import Camera
from utils_parallel import default_worker_count

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def parse_resolution(value: str) -> Tuple[int, int]:
    """'WxH' to (width, height)."""
    try:
        width, height = (int(part) for part in value.lower().split("x"))
    except ValueError as e:
        raise ConfigurationError("resolution", f"expected WxH, got '{value}'") from e
    if width < 1 or height < 1:
        raise ConfigurationError("resolution", f"width and height must be positive, got '{value}'")
    return width, height


@dataclass
class PipelineSettings:
    """
    Process-wide settings.

    Read from the environment after loading a .env file when one exists:
    LOG_LEVEL, SYNTH_MAX_WORKERS, SYNTH_RESOLUTION.
    """

    log_level: str = field(default="INFO")
    max_workers: int = field(default=1)
    resolution: Optional[Tuple[int, int]] = field(default=None)

    def __post_init__(self):
        load_dotenv(find_dotenv(usecwd=True), override=False)

        self.log_level = os.getenv("LOG_LEVEL", self.log_level).upper()
        if self.log_level not in LOG_LEVELS:
            raise ConfigurationError("LOG_LEVEL", f"unknown level '{self.log_level}'")

        workers = os.getenv("SYNTH_MAX_WORKERS")
        if workers:
            if workers.strip().lower() == "auto":
                self.max_workers = default_worker_count()
            else:
                try:
                    self.max_workers = int(workers)
                except ValueError as e:
                    raise ConfigurationError("SYNTH_MAX_WORKERS", f"not an integer: '{workers}'") from e
            if self.max_workers < 1:
                raise ConfigurationError("SYNTH_MAX_WORKERS", "must be at least 1")

        resolution = os.getenv("SYNTH_RESOLUTION")
        if resolution:
            self.resolution = parse_resolution(resolution)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "log_level": self.log_level,
            "max_workers": self.max_workers,
            "resolution": "x".join(map(str, self.resolution)) if self.resolution else None,
        }


_settings: Optional[PipelineSettings] = None


def get_settings() -> PipelineSettings:
    """Get global settings instance."""
    global _settings
    if _settings is None:
        _settings = PipelineSettings()
    return _settings


def configure_logging(level: Optional[str] = None) -> None:
    """Log to standard error at `level` (default: settings)."""
    level = (level or get_settings().log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


# ============================================================================
# RUN CONFIG
# ============================================================================

@dataclass
class ResolvedRunConfig:
    """A RunConfig with paths made absolute and overrides applied."""

    config: RunConfig
    path: Path
    avatars_dir: Path
    poses_dir: Path
    backgrounds_dir: Path
    output_root: Path
    camera: Camera
    max_workers: int

    @property
    def seed(self) -> int:
        return self.config.seed

    def inside_output(self, path: Union[str, Path]) -> Path:
        """
        Resolve `path` under the output root.

        Raises:
            ConfigurationError: the path leaves the output root
        """
        path = Path(path)
        resolved = (path if path.is_absolute() else self.output_root / path).resolve()
        if resolved != self.output_root and self.output_root not in resolved.parents:
            raise ConfigurationError("output", f"{resolved} is outside the output root {self.output_root}")
        return resolved

    def identity_ids(self) -> List[str]:
        """Configured identities, or every avatar file in avatars_dir."""
        if self.config.dataset.identities is not None:
            return sorted(self.config.dataset.identities)
        return sorted(path.stem for path in self.avatars_dir.glob("*.json"))

    def class_set(self) -> List[str]:
        """
        Classes of the configured named class set (empty when none is set).

        Raises:
            ConfigurationError: unknown class set name
        """
        name = self.config.dataset.class_set
        if name is None:
            return []
        if name not in ACTION_CLASS_SETS:
            raise ConfigurationError(
                "dataset.class_set", f"unknown class set '{name}' (known: {', '.join(sorted(ACTION_CLASS_SETS))})"
            )
        return list(ACTION_CLASS_SETS[name])

    def background_entries(self) -> List[BackgroundEntry]:
        return [
            BackgroundEntry(id=path.stem, path=str(path))
            for path in sorted(self.backgrounds_dir.glob("*.png"), key=lambda p: p.stem)
        ]

    def dataset_spec(self) -> DatasetSpec:
        """
        DatasetSpec of a gen-dataset run. Lists directories, loads no file.

        Raises:
            InvariantViolationError: the assembled spec is invalid
        """
        dataset = self.config.dataset
        classes = list(dataset.classes) or self.class_set() or sorted({r.class_label for r in dataset.references})
        document = {
            "classes": classes,
            "references": [
                ReferenceEntry(id=r.id, class_label=r.class_label, pose=str(self.poses_dir / r.pose))
                for r in dataset.references
            ],
            "identities": [
                IdentityEntry(id=ident, avatar=str(self.avatars_dir / f"{ident}.json"))
                for ident in self.identity_ids()
            ],
            "backgrounds": self.background_entries(),
            "g": dataset.g,
            "seed": self.seed,
            "normalization": self.config.normalization.reference,
            "camera": CameraModel(**self.camera.to_dict()),
            "placement": self.config.placement,
            "camera_jitter": dataset.camera_jitter,
            "output_root": str(self.output_root),
        }
        try:
            return DatasetSpec.model_validate(document)
        except ValidationError as e:
            raise from_validation_error(e, str(self.path)) from e


def load_run_config(
    path: Union[str, Path],
    seed: Optional[int] = None,
    out: Optional[Union[str, Path]] = None,
    jobs: Optional[int] = None,
    resolution: Optional[Tuple[int, int]] = None,
    require_inputs: bool = True
) -> ResolvedRunConfig:
    """
    Load and resolve a run config.

    Relative paths are taken from the config file's directory; --out is
    taken from the working directory.

    Args:
        path: Config file
        seed: Overrides config seed
        out: Overrides paths.output_root
        jobs: Worker cap (default: settings)
        resolution: (width, height) overriding the camera's
        require_inputs: Check that the input directories exist

    Returns:
        ResolvedRunConfig

    Raises:
        ConfigurationError: missing config or input directory
        DocumentFormatError / InvariantViolationError: invalid config
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigurationError("--config", f"file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DocumentFormatError(str(path), f"invalid JSON ({e.msg}, line {e.lineno})") from e

    try:
        config = RunConfig.model_validate(document)
        if seed is not None:
            config = RunConfig.model_validate({**config.model_dump(), "seed": seed})
    except ValidationError as e:
        raise from_validation_error(e, str(path)) from e

    base = path.resolve().parent
    settings = get_settings()

    def resolve(value: str) -> Path:
        p = Path(value)
        return (p if p.is_absolute() else base / p).resolve()

    dirs = {
        "paths.avatars_dir": resolve(config.paths.avatars_dir),
        "paths.poses_dir": resolve(config.paths.poses_dir),
        "paths.backgrounds_dir": resolve(config.paths.backgrounds_dir),
    }
    if require_inputs:
        for setting, directory in dirs.items():
            if not directory.is_dir():
                raise ConfigurationError(setting, f"directory not found: {directory}")

    output_root = Path(out).resolve() if out is not None else resolve(config.paths.output_root)
    camera = Camera.from_model(config.camera)
    resolution = resolution or settings.resolution
    if resolution is not None and resolution != (camera.width, camera.height):
        camera = camera.at_resolution(*resolution)

    resolved = ResolvedRunConfig(
        config=config,
        path=path.resolve(),
        avatars_dir=dirs["paths.avatars_dir"],
        poses_dir=dirs["paths.poses_dir"],
        backgrounds_dir=dirs["paths.backgrounds_dir"],
        output_root=output_root,
        camera=camera,
        max_workers=jobs or settings.max_workers,
    )
    logger.debug(
        f"Run config {path}: seed {config.seed}, output {output_root}, "
        f"{camera.width}x{camera.height}, {resolved.max_workers} workers"
    )
    return resolved
