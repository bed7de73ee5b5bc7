"""Experiment configuration: JSON schema, profiles, validation, hashing.

A config file is a single JSON object.  Keys mirror the simulation table
(powers in dBm, wavelength in millimeters, element counts, angle ranges in
radians).  Unknown keys anywhere are hard errors so typos cannot silently
fall back to defaults.  Two profiles provide baseline values: "paper"
(256 x 16 elements) and "desk" (32 x 8, cheap enough for laptops); explicit
keys always win over profile defaults.

The resolved configuration (profile applied, derived values filled in) is
what gets hashed; every artifact embeds that hash plus the master seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .channel import ScenarioConfig
from .em import EMConfig
from .steering import ArrayGeometry

VALID_SCHEMES = ("proposed", "far", "near", "mc")
SWEEP_AXES = ("k_factor_db", "n1", "gamma")


class ConfigError(ValueError):
    "Invalid configuration; maps to CLI exit code 1."


# r_min scales with the profile: the paper-scale array has a ~330 m Rayleigh
# distance, desk-scale arrays only a few meters, so the 4 m minimum scatter
# distance would leave no near-field draw range at desk size.
_PROFILES = {
    "desk": {"n1": 32, "n2": 8, "r_min_m": 0.25},
    "paper": {"n1": 256, "n2": 16, "r_min_m": 4.0},
}

_SCENARIO_KEYS = {"n1", "n2", "wavelength_mm", "spacing_mm", "num_paths", "gamma",
                  "k_factor_db", "num_samples", "theta_range_rad", "phi_range_rad",
                  "r_min_m", "strict_gamma"}
_EM_KEYS = {"delta", "max_em_iters", "max_grad_iters", "armijo_c", "armijo_rho",
            "step0", "restarts", "init_probes", "r_bounds_m"}
_BASELINE_KEYS = {"far_n_theta", "far_n_phi", "polar_n_theta", "polar_n_phi",
                  "polar_n_dist", "refine"}
_OP_KEYS = {"r_th_grid", "r_th_points", "tx_power_dbm", "noise_dbm", "mc_samples"}
_TOP_KEYS = {"profile", "seed", "output_dir", "scenario", "em", "baselines", "op",
             "schemes", "sweep"}
_SWEEP_KEYS = {"axis", "values"}


@dataclass
class BaselineGrids:
    far_n_theta: int
    far_n_phi: int
    polar_n_theta: int
    polar_n_phi: int
    polar_n_dist: int
    refine: bool = False


@dataclass
class OPGrid:
    tx_power_w: float
    noise_var_w: float
    mc_samples: int
    r_th_grid: list[float] | None = None
    r_th_points: int = 11


@dataclass
class SweepSpec:
    axis: str
    values: list[float]


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    em: EMConfig
    baselines: BaselineGrids
    op: OPGrid
    schemes: tuple[str, ...]
    sweep: SweepSpec | None
    seed: int
    profile: str
    output_dir: str | None
    resolved: dict = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hash_config(self.resolved)


def hash_config(resolved: dict) -> str:
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON at line {err.lineno}, column {err.colno}: "
                          f"{err.msg}") from err
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err


def _reject_unknown(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        names = ", ".join(sorted(unknown))
        raise ConfigError(f"unknown key(s) in {where}: {names}")


def _require_type(value, types, where: str):
    if not isinstance(value, types):
        raise ConfigError(f"{where}: expected {types}, got {type(value).__name__} ({value!r})")
    return value


def resolve_config(raw: dict, profile_override: str | None = None,
                   seed_override: int | None = None) -> ExperimentConfig:
    "Validate a raw config dict and fill profile plus derived defaults."
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be a JSON object")
    _reject_unknown(raw, _TOP_KEYS, "config")

    profile = profile_override or raw.get("profile", "desk")
    if profile not in _PROFILES:
        raise ConfigError(f"profile must be one of {sorted(_PROFILES)}, got {profile!r}")
    seed = seed_override if seed_override is not None else raw.get("seed", 20240601)
    _require_type(seed, int, "seed")

    scen_raw = dict(raw.get("scenario", {}))
    _reject_unknown(scen_raw, _SCENARIO_KEYS, "scenario")
    n1 = int(scen_raw.get("n1", _PROFILES[profile]["n1"]))
    n2 = int(scen_raw.get("n2", _PROFILES[profile]["n2"]))
    wavelength_mm = float(scen_raw.get("wavelength_mm", 10.0))
    spacing_mm = float(scen_raw.get("spacing_mm", wavelength_mm / 2.0))
    num_paths = int(scen_raw.get("num_paths", 4))
    gamma = float(scen_raw.get("gamma", 1.0))
    k_factor_db = float(scen_raw.get("k_factor_db", 5.0))
    num_samples = int(scen_raw.get("num_samples", 100))
    theta_range = tuple(float(v) for v in scen_raw.get("theta_range_rad",
                                                       (math.pi / 3, 2 * math.pi / 3)))
    phi_range = tuple(float(v) for v in scen_raw.get("phi_range_rad",
                                                     (-math.pi / 6, math.pi / 6)))
    r_min = float(scen_raw.get("r_min_m", _PROFILES[profile]["r_min_m"]))
    strict_gamma = bool(scen_raw.get("strict_gamma", False))
    if len(theta_range) != 2 or len(phi_range) != 2:
        raise ConfigError("angle ranges must be two-element [lo, hi] lists")
    try:
        geometry = ArrayGeometry(n1=n1, n2=n2, d=spacing_mm * 1e-3,
                                 wavelength=wavelength_mm * 1e-3)
        scenario = ScenarioConfig(geometry=geometry, num_paths=num_paths, gamma=gamma,
                                  k_factor_db=k_factor_db, num_samples=num_samples,
                                  theta_range=theta_range, phi_range=phi_range,
                                  r_min=r_min, seed=seed, strict_gamma=strict_gamma)
    except ValueError as err:
        raise ConfigError(f"scenario: {err}") from err

    em_raw = dict(raw.get("em", {}))
    _reject_unknown(em_raw, _EM_KEYS, "em")
    r_bounds_m = em_raw.get("r_bounds_m")
    if r_bounds_m is not None:
        r_bounds_m = tuple(float(v) for v in r_bounds_m)
        if len(r_bounds_m) != 2:
            raise ConfigError("em.r_bounds_m must be [lo, hi]")
    try:
        em = EMConfig(delta=float(em_raw.get("delta", 1e-4)),
                      max_em_iters=int(em_raw.get("max_em_iters", 60)),
                      max_grad_iters=int(em_raw.get("max_grad_iters", 40)),
                      armijo_c=float(em_raw.get("armijo_c", 1e-4)),
                      armijo_rho=float(em_raw.get("armijo_rho", 0.5)),
                      step0=float(em_raw.get("step0", 1.0)),
                      restarts=int(em_raw.get("restarts", 8)),
                      init_probes=int(em_raw.get("init_probes", 64)),
                      seed=seed,
                      theta_bounds=theta_range,
                      phi_bounds=phi_range,
                      r_bounds=r_bounds_m)
    except ValueError as err:
        raise ConfigError(f"em: {err}") from err

    n_elements = n1 * n2
    base_raw = dict(raw.get("baselines", {}))
    _reject_unknown(base_raw, _BASELINE_KEYS, "baselines")
    # default grids give roughly 4N atoms in both dictionaries
    far_side = int(math.ceil(2.0 * math.sqrt(n_elements)))
    polar_side = int(math.ceil(math.sqrt(n_elements)))
    baselines = BaselineGrids(
        far_n_theta=int(base_raw.get("far_n_theta", far_side)),
        far_n_phi=int(base_raw.get("far_n_phi", far_side)),
        polar_n_theta=int(base_raw.get("polar_n_theta", polar_side)),
        polar_n_phi=int(base_raw.get("polar_n_phi", polar_side)),
        polar_n_dist=int(base_raw.get("polar_n_dist", 3)),
        refine=bool(base_raw.get("refine", False)))
    for name in ("far_n_theta", "far_n_phi", "polar_n_theta", "polar_n_phi"):
        if getattr(baselines, name) < 1:
            raise ConfigError(f"baselines.{name} must be >= 1")
    if baselines.polar_n_dist < 0:
        raise ConfigError("baselines.polar_n_dist must be >= 0")

    op_raw = dict(raw.get("op", {}))
    _reject_unknown(op_raw, _OP_KEYS, "op")
    r_th_grid = op_raw.get("r_th_grid")
    if r_th_grid is not None:
        r_th_grid = [float(v) for v in r_th_grid]
        if not r_th_grid:
            raise ConfigError("op.r_th_grid must be non-empty when given")
        if any(b <= a for a, b in zip(r_th_grid, r_th_grid[1:])):
            raise ConfigError("op.r_th_grid must be strictly increasing")
    op = OPGrid(tx_power_w=10.0 ** ((float(op_raw.get("tx_power_dbm", 40.0)) - 30.0) / 10.0),
                noise_var_w=10.0 ** ((float(op_raw.get("noise_dbm", -96.0)) - 30.0) / 10.0),
                mc_samples=int(op_raw.get("mc_samples", 100000)),
                r_th_grid=r_th_grid,
                r_th_points=int(op_raw.get("r_th_points", 11)))
    if op.r_th_points < 2:
        raise ConfigError("op.r_th_points must be >= 2")

    schemes = raw.get("schemes", list(VALID_SCHEMES))
    if not isinstance(schemes, (list, tuple)) or not schemes:
        raise ConfigError("schemes must be a non-empty list")
    bad = [s for s in schemes if s not in VALID_SCHEMES]
    if bad:
        raise ConfigError(f"unknown scheme(s) {bad}; valid: {list(VALID_SCHEMES)}")
    schemes = tuple(dict.fromkeys(schemes))
    if "mc" in schemes and op.mc_samples < 1000:
        raise ConfigError("op.mc_samples must be >= 1000 when the mc scheme is enabled")

    sweep_raw = raw.get("sweep")
    sweep = None
    if sweep_raw is not None:
        _require_type(sweep_raw, dict, "sweep")
        _reject_unknown(sweep_raw, _SWEEP_KEYS, "sweep")
        axis = sweep_raw.get("axis")
        if axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {list(SWEEP_AXES)}, got {axis!r}")
        values = sweep_raw.get("values")
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError("sweep.values must be a non-empty list")
        sweep = SweepSpec(axis=axis, values=[float(v) for v in values])

    output_dir = raw.get("output_dir")
    if output_dir is not None:
        _require_type(output_dir, str, "output_dir")

    resolved = {
        "profile": profile,
        "seed": seed,
        "output_dir": output_dir,
        "scenario": {
            "n1": n1, "n2": n2, "wavelength_mm": wavelength_mm, "spacing_mm": spacing_mm,
            "num_paths": num_paths, "gamma": gamma, "k_factor_db": k_factor_db,
            "num_samples": num_samples, "theta_range_rad": list(theta_range),
            "phi_range_rad": list(phi_range), "r_min_m": r_min,
            "strict_gamma": strict_gamma,
        },
        "em": {
            "delta": em.delta, "max_em_iters": em.max_em_iters,
            "max_grad_iters": em.max_grad_iters, "armijo_c": em.armijo_c,
            "armijo_rho": em.armijo_rho, "step0": em.step0, "restarts": em.restarts,
            "init_probes": em.init_probes,
            "r_bounds_m": list(r_bounds_m) if r_bounds_m is not None else None,
        },
        "baselines": {
            "far_n_theta": baselines.far_n_theta, "far_n_phi": baselines.far_n_phi,
            "polar_n_theta": baselines.polar_n_theta, "polar_n_phi": baselines.polar_n_phi,
            "polar_n_dist": baselines.polar_n_dist, "refine": baselines.refine,
        },
        "op": {
            "r_th_grid": r_th_grid, "r_th_points": op.r_th_points,
            "tx_power_dbm": float(op_raw.get("tx_power_dbm", 40.0)),
            "noise_dbm": float(op_raw.get("noise_dbm", -96.0)),
            "mc_samples": op.mc_samples,
        },
        "schemes": list(schemes),
        "sweep": {"axis": sweep.axis, "values": sweep.values} if sweep else None,
    }
    return ExperimentConfig(scenario=scenario, em=em, baselines=baselines, op=op,
                            schemes=schemes, sweep=sweep, seed=seed, profile=profile,
                            output_dir=output_dir, resolved=resolved)


def default_r_th_grid(mean_power: float, sigma2: float, n_elements: int,
                      tx_power_w: float, noise_var_w: float, points: int) -> np.ndarray:
    """Rate grid straddling the outage transition of the true channel.

    ||h||^2 scaled by 2/sigma2 has mean 2N + lam and variance 4N + 4 lam;
    the grid spans six standard deviations either side of the mean rate.
    """
    lam = mean_power / (sigma2 / 2.0)
    dof = 2.0 * n_elements
    center = dof + lam
    spread = math.sqrt(2.0 * dof + 4.0 * lam)
    snr_scale = tx_power_w * sigma2 / 2.0 / noise_var_w
    lo = max(center - 6.0 * spread, 0.25 * center)
    hi = center + 6.0 * spread
    r_lo = math.log2(1.0 + snr_scale * lo)
    r_hi = math.log2(1.0 + snr_scale * hi)
    return np.linspace(r_lo, r_hi, points)
