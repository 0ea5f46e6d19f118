"""Run configuration: strict JSON loading and the built-in presets."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .apg import SolveConfig
from .tensorio import SigmaGrid

__all__ = [
    "ConfigError",
    "GridSection",
    "SigmaSection",
    "SynthSection",
    "SolveSection",
    "DetectSection",
    "EmdSection",
    "RunConfig",
    "PRESETS",
    "preset",
    "load_config",
]

# analysis grid for the 512 x 512 setting (blur width to blur plus maximal diffusion)
FULL_SIGMA_EDGES = [2.3, 5.0, 9.0, 13.0, 23.0, 33.0, 43.0, 53.0, 67.0]
# same construction scaled to 128 x 128: sigma_max = 64.5 * 128 / 512 ~ 16.1
DESK_SIGMA_EDGES = [2.3, 3.5, 5.0, 6.5, 8.0, 10.0, 12.5, 15.0, 18.5]


class ConfigError(ValueError):
    pass


@dataclass
class GridSection:
    M: int = 128
    N: int = 128
    pixel_pitch: float = 6.45

    def validate(self):
        if self.M < 1 or self.N < 1:
            raise ConfigError("grid dims must be >= 1")
        if not self.pixel_pitch > 0:
            raise ConfigError("pixel_pitch must be positive")


@dataclass
class SigmaSection:
    edges: list = field(default_factory=lambda: list(DESK_SIGMA_EDGES))
    aleph: Optional[list] = None  # 0-based bin indices; None means every bin

    def grid(self) -> SigmaGrid:
        return SigmaGrid(np.asarray(self.edges, dtype=np.float64), self.aleph)

    def validate(self):
        try:
            g = self.grid()
        except ValueError as exc:
            raise ConfigError(f"sigma: {exc}") from None
        if g.edges[0] <= 0:
            raise ConfigError("sigma: first edge must be positive")


@dataclass
class SynthSection:
    n_cells: int = 20
    q_max: float = 1000.0
    profile: Union[str, list] = "uniform"
    blur_sigma: float = 2.28
    bits: int = 10
    seed: int = 0
    gen_bins: int = 30
    gen_sigma_min: float = 1.0
    gen_sigma_max: float = 16.125
    margin: int = 10
    min_separation: float = 20.0
    quadrature_nodes: int = 5

    def gen_grid(self) -> SigmaGrid:
        return SigmaGrid.uniform(self.gen_sigma_min, self.gen_sigma_max, self.gen_bins)

    def validate(self):
        if self.n_cells < 1:
            raise ConfigError("synth.n_cells must be >= 1")
        if not self.q_max > 0:
            raise ConfigError("synth.q_max must be positive")
        if not self.blur_sigma > 0:
            raise ConfigError("synth.blur_sigma must be positive")
        if self.bits < 1:
            raise ConfigError("synth.bits must be >= 1")
        if not 0 < self.gen_sigma_min < self.gen_sigma_max:
            raise ConfigError("synth needs 0 < gen_sigma_min < gen_sigma_max")
        if self.gen_bins < 1 or self.quadrature_nodes < 1:
            raise ConfigError("synth.gen_bins and synth.quadrature_nodes must be >= 1")
        if self.margin < 0 or self.min_separation < 0:
            raise ConfigError("synth.margin and synth.min_separation must be non-negative")
        if isinstance(self.profile, str):
            if self.profile not in ("uniform", "triangular_decay"):
                raise ConfigError(f"unknown profile {self.profile!r}")
        elif len(self.profile) != self.gen_bins:
            raise ConfigError("custom profile needs one entry per generation bin")


@dataclass
class SolveSection:
    lam: float = 0.5
    iters: int = 2000
    rank: Union[int, str] = 1
    step_mode: str = "power_iteration"
    eta: Optional[float] = None
    momentum: str = "fista"
    log_every: int = 10
    prox_mode: str = "ball"
    xi: Optional[list] = None
    tol_rel_cost: Optional[float] = None
    power_iters: int = 200

    @property
    def approx(self) -> str:
        return "full" if self.rank == "full" else "lowrank"

    @property
    def bank_rank(self) -> int:
        return 1 if self.rank == "full" else int(self.rank)

    def solve_config(self, seed: int = 0) -> SolveConfig:
        return SolveConfig(
            lam=self.lam,
            iters=self.iters,
            step_mode=self.step_mode,
            eta=self.eta,
            momentum=self.momentum,
            approx=self.approx,
            prox_mode=self.prox_mode,
            xi=None if self.xi is None else tuple(self.xi),
            log_every=self.log_every,
            tol_rel_cost=self.tol_rel_cost,
            power_iters=self.power_iters,
            seed=seed,
        )

    def validate(self):
        if self.rank != "full" and (not isinstance(self.rank, int) or self.rank < 1):
            raise ConfigError("solve.rank must be a positive integer or 'full'")
        if self.prox_mode not in ("ball", "ellipsoid"):
            raise ConfigError(f"unknown prox_mode {self.prox_mode!r}")
        try:
            self.solve_config()
        except ValueError as exc:
            raise ConfigError(f"solve: {exc}") from None


@dataclass
class DetectSection:
    rho: float = 3.0
    strict_diameter: bool = False

    def validate(self):
        if not self.rho > 0:
            raise ConfigError("detect.rho must be positive")


@dataclass
class EmdSection:
    prune_eps: float = 1e-8

    def validate(self):
        if not 0 <= self.prune_eps < 1:
            raise ConfigError("emd.prune_eps must lie in [0, 1)")


_SECTIONS = {
    "grid": GridSection,
    "sigma": SigmaSection,
    "synth": SynthSection,
    "solve": SolveSection,
    "detect": DetectSection,
    "emd": EmdSection,
}


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    sigma: SigmaSection = field(default_factory=SigmaSection)
    synth: SynthSection = field(default_factory=SynthSection)
    solve: SolveSection = field(default_factory=SolveSection)
    detect: DetectSection = field(default_factory=DetectSection)
    emd: EmdSection = field(default_factory=EmdSection)

    def validate(self) -> "RunConfig":
        for name in _SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, obj: dict, base: Optional["RunConfig"] = None) -> "RunConfig":
        """Overlay ``obj`` on ``base`` (defaults if None); unknown keys are errors."""
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        cfg = copy.deepcopy(base) if base is not None else cls()
        for name, values in obj.items():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown config section {name!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"section {name!r} must be an object")
            section = getattr(cfg, name)
            known = {f.name for f in dataclasses.fields(section)}
            for key, val in values.items():
                if key not in known:
                    raise ConfigError(f"unknown key {name}.{key}")
                setattr(section, key, val)
        return cfg.validate()


def _desk() -> RunConfig:
    return RunConfig().validate()


def _full_preset() -> RunConfig:
    return RunConfig(
        grid=GridSection(512, 512, 6.45),
        sigma=SigmaSection(list(FULL_SIGMA_EDGES)),
        synth=SynthSection(
            n_cells=250,
            bits=10,
            gen_sigma_max=64.5,
            margin=0,
            min_separation=0.0,
        ),
        solve=SolveSection(lam=0.5, iters=10_000, rank=1),
    ).validate()


PRESETS = {"desk": _desk, "paper-full": _full_preset}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def load_config(path=None, preset_name: Optional[str] = None) -> RunConfig:
    """Preset (default "desk") overlaid with the JSON file at ``path``, if any.

    A top-level ``"preset"`` key in the file selects the base preset.
    """
    obj: dict[str, Any] = {}
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        obj = dict(obj)
        file_preset = obj.pop("preset", None)
        if file_preset is not None:
            if preset_name is not None and preset_name != file_preset:
                raise ConfigError("preset given both on the command line and in the config file")
            preset_name = file_preset
    base = preset(preset_name or "desk")
    return RunConfig.from_dict(obj, base)
