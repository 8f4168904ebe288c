"""Run configuration: a JSON file plus command-line overrides.

Every field defaults to the reference value, so `eetheom sweep --system
FMO-2` reproduces the corresponding table row without a config file.
Exactly one of a bath point or a parameter grid applies per command.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .heom import TimeGrid
from .quantum import BathSpec, SiteHamiltonian, build_site_hamiltonian
from .sweep import SweepGrid, default_sweep_grid

__all__ = ["RunConfig", "ConfigError", "OUTPUT_ROOT_ENV"]

OUTPUT_ROOT_ENV = "EETHEOM_OUT"


class ConfigError(ValueError):
    """Configuration failed validation; the message names the field."""


@dataclass
class RunConfig:
    """Everything a command needs: the system, a bath point or sweep grid,
    the time window, hierarchy and sampling settings, and output options."""

    system: str | None = None
    energies: list | None = None
    couplings: list | None = None
    bath: dict | None = None
    grid: dict | None = None
    time: dict = field(default_factory=dict)
    depth: int | None = None
    auto_converge: bool = True
    samples: int = 1000
    seed: int = 1
    workers: int = 1
    out: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"config file {path}: unknown fields {sorted(unknown)}")
        return cls(**data)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    def hamiltonian(self) -> SiteHamiltonian:
        if self.system is not None:
            try:
                return build_site_hamiltonian(self.system)
            except ValueError as exc:
                raise ConfigError(f"system: {exc}") from None
        if self.energies is None or self.couplings is None:
            raise ConfigError("system: name a system or give explicit energies and couplings")
        try:
            return build_site_hamiltonian(energies=self.energies, couplings=self.couplings)
        except ValueError as exc:
            raise ConfigError(f"energies/couplings: {exc}") from None

    def bath_point(self) -> BathSpec:
        if self.grid is not None and self.bath is not None:
            raise ConfigError("bath/grid: give a bath point or a grid, not both")
        if self.bath is None:
            raise ConfigError("bath: this command needs a single bath point "
                              "(lambda, tau, temperature)")
        try:
            return BathSpec(
                lam=float(self.bath["lambda"]),
                tau=float(self.bath["tau"]),
                temperature=float(self.bath["temperature"]),
            )
        except KeyError as exc:
            raise ConfigError(f"bath: missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bath: {exc}") from None

    def sweep_grid(self, n_sites: int) -> SweepGrid:
        if self.grid is not None and self.bath is not None:
            raise ConfigError("bath/grid: give a bath point or a grid, not both")
        if self.grid is None:
            return default_sweep_grid(n_sites)
        try:
            return SweepGrid(
                lambda_range=tuple(self.grid["lambda_range"]),
                tau_range=tuple(self.grid["tau_range"]),
                temp_range=tuple(self.grid["temp_range"]),
            )
        except KeyError as exc:
            raise ConfigError(f"grid: missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"grid: {exc}") from None

    def timegrid(self) -> TimeGrid:
        defaults = {"t_end": 1000.0, "dt": 0.5, "output_stride": 5, "t_start": 0.0}
        unknown = set(self.time) - set(defaults)
        if unknown:
            raise ConfigError(f"time: unknown fields {sorted(unknown)}")
        defaults.update(self.time)
        try:
            return TimeGrid(**defaults)
        except ValueError as exc:
            raise ConfigError(f"time: {exc}") from None

    def output_dir(self, default_name: str) -> Path:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
        return Path(self.out) if self.out is not None else root / default_name
