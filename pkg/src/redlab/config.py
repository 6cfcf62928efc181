"""Run configuration: a strict JSON schema with fail-fast unknown keys.

The document shape is::

    {
      "steps": 2000, "lr": 0.001, "seed": 0, "widths": [8, 16],
      "adr": {"enabled": false, "D_m": 4, "D_e": 16, "D_k": 3},
      "dynconv": {"enabled": false, "K": 4}
    }

Every key is optional (defaults above), but any key outside the schema —
at any nesting level — is rejected outright.  A silent typo in, say,
``"D_e"`` would otherwise invalidate a whole probe campaign.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ConfigurationError
from .rng import Rng


def _require_keys(doc: dict, allowed: set, where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigurationError(f"unknown {where} keys: {sorted(unknown)}")


def _as_int(doc: dict, key: str, default: int, minimum: int, where: str) -> int:
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"{where}.{key} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{where}.{key} must be >= {minimum}, got {value}")
    return value


def _as_bool(doc: dict, key: str, default: bool, where: str) -> bool:
    value = doc.get(key, default)
    if not isinstance(value, bool):
        raise ConfigurationError(f"{where}.{key} must be a boolean, got {value!r}")
    return value


@dataclass(frozen=True)
class RunConfig:
    """Validated model/training settings; the single source for builds."""

    steps: int = 2000
    lr: float = 1e-3
    seed: int = 0
    widths: tuple = (8, 16)
    adr_enabled: bool = False
    adr_d_m: int = 4
    adr_d_e: int = 16
    adr_d_k: int = 3
    dyn_enabled: bool = False
    dyn_k: int = 4

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigurationError(f"config must be a JSON object, got {type(doc).__name__}")
        _require_keys(doc, {"steps", "lr", "seed", "widths", "adr", "dynconv"}, "config")

        steps = _as_int(doc, "steps", 2000, 1, "config")
        seed = _as_int(doc, "seed", 0, 0, "config")

        lr = doc.get("lr", 1e-3)
        if isinstance(lr, bool) or not isinstance(lr, (int, float)):
            raise ConfigurationError(f"config.lr must be a number, got {lr!r}")
        if lr < 0:
            raise ConfigurationError(f"config.lr must be >= 0, got {lr}")

        widths = doc.get("widths", [8, 16])
        if (
            not isinstance(widths, (list, tuple))
            or len(widths) != 2
            or any(isinstance(w, bool) or not isinstance(w, int) or w < 1 for w in widths)
        ):
            raise ConfigurationError(
                f"config.widths must be two positive integers, got {widths!r}"
            )

        adr = doc.get("adr", {})
        if not isinstance(adr, dict):
            raise ConfigurationError(f"config.adr must be an object, got {adr!r}")
        _require_keys(adr, {"enabled", "D_m", "D_e", "D_k"}, "config.adr")
        adr_enabled = _as_bool(adr, "enabled", False, "config.adr")
        adr_d_m = _as_int(adr, "D_m", 4, 1, "config.adr")
        adr_d_e = _as_int(adr, "D_e", 16, 2, "config.adr")
        adr_d_k = _as_int(adr, "D_k", 3, 1, "config.adr")
        if adr_d_k % 2 == 0:
            raise ConfigurationError(f"config.adr.D_k must be odd, got {adr_d_k}")

        dyn = doc.get("dynconv", {})
        if not isinstance(dyn, dict):
            raise ConfigurationError(f"config.dynconv must be an object, got {dyn!r}")
        _require_keys(dyn, {"enabled", "K"}, "config.dynconv")
        dyn_enabled = _as_bool(dyn, "enabled", False, "config.dynconv")
        dyn_k = _as_int(dyn, "K", 4, 1, "config.dynconv")

        return RunConfig(
            steps=steps,
            lr=float(lr),
            seed=seed,
            widths=tuple(widths),
            adr_enabled=adr_enabled,
            adr_d_m=adr_d_m,
            adr_d_e=adr_d_e,
            adr_d_k=adr_d_k,
            dyn_enabled=dyn_enabled,
            dyn_k=dyn_k,
        )

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "lr": self.lr,
            "seed": self.seed,
            "widths": list(self.widths),
            "adr": {
                "enabled": self.adr_enabled,
                "D_m": self.adr_d_m,
                "D_e": self.adr_d_e,
                "D_k": self.adr_d_k,
            },
            "dynconv": {"enabled": self.dyn_enabled, "K": self.dyn_k},
        }

    def replace_adr(self, **axes) -> "RunConfig":
        """A copy with some of D_m/D_e/D_k overridden (ablation grids)."""
        doc = self.to_dict()
        for key, value in axes.items():
            if key not in ("D_m", "D_e", "D_k"):
                raise ConfigurationError(f"unknown ablation axis {key!r}")
            doc["adr"][key] = value
        return RunConfig.from_dict(doc)


def load_config(path: str) -> RunConfig:
    """Parse and validate a config file; any JSON problem fails fast."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path!r} is not valid JSON: {exc}")
    return RunConfig.from_dict(doc)


def build_model(cfg: RunConfig):
    """Seed-pinned enhancer matching the configuration."""
    from .enhancer import ToyEnhancer

    return ToyEnhancer(
        Rng(cfg.seed),
        widths=cfg.widths,
        adr_blocks=(cfg.adr_enabled, cfg.adr_enabled),
        adr_dims=(cfg.adr_d_m, cfg.adr_d_e, cfg.adr_d_k),
        dyn_candidates=cfg.dyn_k if cfg.dyn_enabled else 0,
    )
