"""Flat ``section.key = value`` configuration files.

Every model coefficient has a key with the Table 1 default; unknown keys are
errors so that typos do not silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fem import PhysParams
from .mesh import GeometrySpec, MeshError
from .noise import NoiseModel, load_kl_modes

PRESET_DIR = Path(__file__).parent / "presets"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "additive_uniform"
    alpha: float = 0.5
    fine_substeps: int = 16
    profile: str | None = None
    kl_eigenvalues: tuple[float, ...] = ()
    kl_modes: str | None = None
    kl_map: tuple[str, ...] = ()


@dataclass(frozen=True)
class SimConfig:
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    physics: PhysParams = field(default_factory=PhysParams)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    dt: float = 0.01
    t_final: float = 300.0
    t_burn_in: float = 30.0
    n_trajectories: int = 1
    base_seed: int = 0
    record_theta: tuple[float, ...] = (math.pi,)
    snapshot_stride: int = 0
    checkpoint_every: int = 0
    tau_convention: str = "rate"
    solver: str = "transfer"  # transfer | direct
    stats_stride: int = 10
    window_start: float | None = None
    window_end: float | None = None
    mesh_file: str | None = None
    base_dir: str = "."

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("sim.dt must be positive")
        if not 0 <= self.t_burn_in < self.t_final:
            raise ConfigError("need 0 <= sim.t_burn_in < sim.t_final")
        if self.n_trajectories < 1:
            raise ConfigError("sim.trajectories must be >= 1")
        if self.tau_convention not in ("rate", "literal"):
            raise ConfigError(f"sim.tau_convention must be rate or literal, got {self.tau_convention!r}")
        if self.solver not in ("transfer", "direct"):
            raise ConfigError(f"sim.solver must be transfer or direct, got {self.solver!r}")
        if self.noise.fine_substeps < 1:
            raise ConfigError("noise.fine_substeps must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def fine_dt(self) -> float:
        return self.dt / self.noise.fine_substeps

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def noise_model(self, n_nodes: int) -> NoiseModel:
        ns = self.noise
        profile = None
        if ns.profile:
            profile = load_kl_modes(self.resolve(ns.profile))[:, 0]
        kw = {}
        if ns.kind == "truncated_kl":
            if not ns.kl_modes:
                raise ConfigError("noise.kl_modes is required for truncated_kl")
            kw = dict(
                eigenvalues=np.array(ns.kl_eigenvalues, dtype=float),
                modes=load_kl_modes(self.resolve(ns.kl_modes)),
                mode_map=ns.kl_map,
            )
        return NoiseModel(kind=ns.kind, alpha=ns.alpha, seed=self.base_seed, fine_dt=self.fine_dt, profile=profile, **kw)

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def config_hash(self) -> str:
        """Digest of everything that influences a single trajectory."""
        text = dump_config(self, for_hash=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# key -> (object, attribute, parser)
def _float(s):
    return float(s)


def _int(s):
    return int(s)


def _str(s):
    return s


def _opt_str(s):
    return s or None


def _opt_float(s):
    return float(s) if s else None


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _strs(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


_PI = re.compile(r"^([+-]?)(\d*\.?\d*)\s*\*?\s*pi(?:\s*/\s*(\d+(?:\.\d*)?))?$")


def _angle(tok: str) -> float:
    tok = tok.strip()
    m = _PI.match(tok)
    if m:
        sign = -1.0 if m.group(1) == "-" else 1.0
        coef = float(m.group(2)) if m.group(2) else 1.0
        den = float(m.group(3)) if m.group(3) else 1.0
        return sign * coef * math.pi / den
    return float(tok)


def _angles(s):
    return tuple(_angle(x) for x in s.split(",") if x.strip())


def _point(s):
    t = _floats(s)
    if len(t) != 2:
        raise ValueError("expected 'x, y'")
    return t


KEYS = {
    "geometry.center": ("geometry", "cell_center", _point),
    "geometry.radius": ("geometry", "cell_radius", _float),
    "geometry.h": ("geometry", "target_h", _float),
    "geometry.outer_bc": ("geometry", "outer_bc_kind", _str),
    "geometry.outer_shape": ("geometry", "outer_shape", _str),
    "geometry.outer_radius": ("geometry", "outer_radius", _float),
    "geometry.mesh_file": (None, "mesh_file", _opt_str),
    "physics.sigma_i": ("physics", "sigma_i", _float),
    "physics.sigma_e": ("physics", "sigma_e", _float),
    "physics.c_m": ("physics", "c_m", _float),
    "physics.S0": ("physics", "S0", _float),
    "physics.S1": ("physics", "S1", _float),
    "physics.tau_ep": ("physics", "tau_ep", _float),
    "physics.tau_res": ("physics", "tau_res", _float),
    "physics.k_ep": ("physics", "k_ep", _float),
    "physics.V_th": ("physics", "V_th", _float),
    "physics.g": ("physics", "g_amplitude", _float),
    "physics.g_waveform": ("physics", "g_waveform", _str),
    "physics.g_t_on": ("physics", "g_t_on", _float),
    "physics.g_t_off": ("physics", "g_t_off", _float),
    "noise.kind": ("noise", "kind", _str),
    "noise.alpha": ("noise", "alpha", _float),
    "noise.fine_substeps": ("noise", "fine_substeps", _int),
    "noise.profile": ("noise", "profile", _opt_str),
    "noise.kl_eigenvalues": ("noise", "kl_eigenvalues", _floats),
    "noise.kl_modes": ("noise", "kl_modes", _opt_str),
    "noise.kl_map": ("noise", "kl_map", _strs),
    "sim.dt": (None, "dt", _float),
    "sim.t_final": (None, "t_final", _float),
    "sim.t_burn_in": (None, "t_burn_in", _float),
    "sim.trajectories": (None, "n_trajectories", _int),
    "sim.seed": (None, "base_seed", _int),
    "sim.record_theta": (None, "record_theta", _angles),
    "sim.snapshot_stride": (None, "snapshot_stride", _int),
    "sim.checkpoint_every": (None, "checkpoint_every", _int),
    "sim.tau_convention": (None, "tau_convention", _str),
    "sim.solver": (None, "solver", _str),
    "stats.stride": (None, "stats_stride", _int),
    "stats.window_start": (None, "window_start", _opt_float),
    "stats.window_end": (None, "window_end", _opt_float),
}
# keys that do not change what a single trajectory computes
_HASH_EXEMPT = {"sim.trajectories", "sim.checkpoint_every", "stats.stride", "stats.window_start", "stats.window_end"}


def parse_config(text: str, base_dir: str = ".") -> SimConfig:
    sections: dict[str | None, dict] = {"geometry": {}, "physics": {}, "noise": {}, None: {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (x.strip() for x in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        sec, attr, parser = KEYS[key]
        try:
            sections[sec][attr] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    try:
        return SimConfig(
            geometry=GeometrySpec(**sections["geometry"]),
            physics=PhysParams(**sections["physics"]),
            noise=NoiseSpec(**sections["noise"]),
            base_dir=str(base_dir),
            **sections[None],
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ConfigError, MeshError)):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path_or_preset) -> SimConfig:
    """Read a config file; a bare name such as ``additive`` selects a shipped preset."""
    p = Path(path_or_preset)
    if not p.exists():
        cand = PRESET_DIR / f"{path_or_preset}.cfg"
        if cand.exists():
            p = cand
        else:
            raise ConfigError(f"no config file or preset named {path_or_preset!r}")
    return parse_config(p.read_text(), base_dir=str(p.parent))


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def dump_config(cfg: SimConfig, for_hash: bool = False) -> str:
    objs = {"geometry": cfg.geometry, "physics": cfg.physics, "noise": cfg.noise, None: cfg}
    lines = []
    for key, (sec, attr, _) in KEYS.items():
        if for_hash and key in _HASH_EXEMPT:
            continue
        lines.append(f"{key} = {_fmt(getattr(objs[sec], attr))}")
    return "\n".join(lines) + "\n"
