"""Run configuration: a flat key = value file selecting backend and knobs.

Format: one ``key = value`` pair per line, ``#`` comments, values optionally
quoted. Dotted keys namespace backend-specific options, e.g.
``read_power_cmd.gpu`` or ``dimm.count``. The config path can also come
from the ``CAPTUNE_CONFIG`` environment variable; with neither, defaults
select the simulated backend with the generic archetype.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

ENV_CONFIG = "CAPTUNE_CONFIG"


def parse_config_text(text: str) -> dict[str, str]:
    options: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if value and value[0] == value[-1] and value[0] in ("'", '"') and len(value) >= 2:
            value = value[1:-1]
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        options[key] = value
    return options


@dataclass(frozen=True, slots=True)
class RunConfig:
    """Typed view over the flat options, with the raw map kept alongside."""

    backend: str = "simulated"
    archetype: str = "generic"
    setup: str = "setup1"
    seed: int | None = None
    sample_period_s: float = 0.1
    idle_window_s: float = 30.0
    main_epochs: int = 3
    guard_min_fraction: float = 0.3
    reference_run: bool = True
    options: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_options(cls, options: Mapping[str, str]) -> "RunConfig":
        def get_float(key: str, default: float) -> float:
            try:
                return float(options.get(key, default))
            except ValueError as exc:
                raise ConfigError(f"option {key} must be a number") from exc

        def get_int(key: str, default: int) -> int:
            try:
                return int(options.get(key, default))
            except ValueError as exc:
                raise ConfigError(f"option {key} must be an integer") from exc

        seed = get_int("seed", -1) if "seed" in options else None
        reference = options.get("reference_run", "true").strip().lower() not in (
            "false",
            "0",
            "no",
        )
        cfg = cls(
            backend=options.get("backend", "simulated"),
            archetype=options.get("archetype", "generic"),
            setup=options.get("setup", "setup1"),
            seed=seed,
            sample_period_s=get_float("sample_period_s", 0.1),
            idle_window_s=get_float("idle_window_s", 30.0),
            main_epochs=get_int("main_epochs", 3),
            guard_min_fraction=get_float("guard_min_fraction", 0.3),
            reference_run=reference,
            options=dict(options),
        )
        if cfg.sample_period_s <= 0:
            raise ConfigError("sample_period_s must be positive")
        if cfg.main_epochs < 1:
            raise ConfigError("main_epochs must be >= 1")
        if not (0 < cfg.guard_min_fraction <= 1):
            raise ConfigError("guard_min_fraction must lie in (0, 1]")
        return cfg


def load_run_config(path: str | Path | None = None) -> RunConfig:
    """Load config from an explicit path, the environment, or defaults."""
    if path is None:
        env = os.environ.get(ENV_CONFIG)
        path = env if env else None
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return RunConfig.from_options(parse_config_text(p.read_text("utf-8")))
