"""Run configuration: one JSON file with spin/herald/efficiency/sim/analysis sections."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .dicke import CollectiveSpinState
from .efficiency import (
    BeamGeometry,
    EfficiencyChain,
    TransitionLine,
    eta_ac_stark,
    eta_phase,
    eta_scatter_from_calibration,
    optical_phase_shift,
)
from .herald import HeraldParams, PurityBudget, purity


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class AtomNumberModel:
    mean: float
    spread: float = 0.0
    multipliers: tuple[float, ...] = (1.0,)

    def mean_n(self) -> float:
        m = self.multipliers
        return self.mean * sum(m) / len(m)

    def mean_n_sq(self) -> float:
        m = self.multipliers
        return self.mean**2 * (1 + self.spread**2) * sum(x * x for x in m) / len(m)


@dataclass(frozen=True)
class NoiseCoefficients:
    c_const: float
    c_lin: float
    c_quad: float

    def variance(self, n_atoms):
        return self.c_const + self.c_lin * n_atoms + self.c_quad * n_atoms**2


@dataclass(frozen=True)
class DriftModel:
    log_variance_step: float = 0.0
    common_mode_offset: float = 0.0
    common_mode_walk: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    shots: int
    atom_number: AtomNumberModel
    noise: NoiseCoefficients
    drift: DriftModel
    p_click: float
    p_state: float
    eta_chain: EfficiencyChain
    window: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.shots < 0:
            raise ConfigError("sim.shots", "must be non-negative")
        for key in ("p_click", "p_state"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(f"sim.{key}", "must lie in [0, 1]")
        for key in ("c_const", "c_lin", "c_quad"):
            if getattr(self.noise, key) < 0:
                raise ConfigError(f"sim.noise.{key}", "must be non-negative")
        if self.window < 2 or self.window % 2:
            raise ConfigError("analysis.window", "must be an even integer >= 2")
        if self.atom_number.mean <= 0:
            raise ConfigError("sim.atom_number.mean", "must be positive")
        if not self.atom_number.multipliers or min(self.atom_number.multipliers) <= 0:
            raise ConfigError("sim.atom_number.multipliers", "must be a non-empty list of positive numbers")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("sim.seed", "must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class AnalysisConfig:
    window: int = 200
    bootstrap_resamples: int = 1000
    bootstrap_seed: int = 0
    scaling_bins: int = 8


@dataclass
class RunConfig:
    raw: dict
    spin: CollectiveSpinState
    herald: HeraldParams
    purity_budget: PurityBudget
    lines: list[TransitionLine]
    alpha0: float
    geometry: BeamGeometry
    chain: EfficiencyChain
    chi_exct: float
    sim: SimConfig
    analysis: AnalysisConfig
    herald_truncation: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.raw)


def default_config_dict() -> dict:
    text = resources.files("spinherald.data").joinpath("default_config.json").read_text("utf-8")
    return json.loads(text)


def fingerprint(raw: Mapping) -> str:
    """sha256 of the canonical JSON form; insensitive to key order."""
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _get(d: Mapping, path: str, default: Any = ...) -> Any:
    node: Any = d
    for part in path.split("."):
        if not isinstance(node, Mapping) or part not in node:
            if default is ...:
                raise ConfigError(path, "missing required key")
            return default
        node = node[part]
    return node


def _num(d: Mapping, path: str, default: Any = ...) -> float:
    value = _get(d, path, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    return float(value)


def _int(d: Mapping, path: str, default: Any = ...) -> int:
    value = _get(d, path, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    return value


def _wrap(path: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None = None, overrides: Mapping | None = None) -> RunConfig:
    """Read a config file (default: the bundled one) and build every section.

    A user file is merged over the bundled defaults, so it only needs the
    keys it changes.
    """
    raw = default_config_dict()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("<file>", "top level must be a JSON object")
        raw = merge(raw, user)
    if overrides:
        raw = merge(raw, overrides)
    return build_config(raw)


def build_config(raw: dict) -> RunConfig:
    spin = _wrap("spin", CollectiveSpinState, _int(raw, "spin.n_atoms"), _int(raw, "spin.excitation"))

    herald = _wrap(
        "herald",
        HeraldParams.from_experiment,
        p0=_num(raw, "herald.p0"),
        p2_ratio=_num(raw, "herald.p2_ratio"),
        pd=_num(raw, "herald.pd"),
        pf_dark=_num(raw, "herald.pf_dark"),
        pf_exct=_num(raw, "herald.pf_exct"),
    )
    budget = _wrap(
        "herald.purity",
        PurityBudget.from_fractions,
        _num(raw, "herald.purity.p_click"),
        _num(raw, "herald.purity.dark"),
        _num(raw, "herald.purity.exct"),
        _num(raw, "herald.purity.decay"),
    )
    truncation = {"n_max": _int(raw, "herald.n_max", 8), "k_max": _int(raw, "herald.k_max", 500)}

    scale = _num(raw, "efficiency.strength_scale", 1.0)
    lines = []
    for i, entry in enumerate(_get(raw, "efficiency.lines")):
        key = f"efficiency.lines[{i}]"
        try:
            detuning, strength, width = (_num(entry, k) for k in ("detuning", "strength", "linewidth"))
        except ConfigError as exc:
            raise ConfigError(f"{key}.{exc.key}", "missing or not a number") from exc
        lines.append(
            _wrap(key, TransitionLine, detuning, scale * strength, width, str(entry.get("label", "")))
        )
    alpha0 = _num(raw, "efficiency.alpha0")
    chi = _wrap("efficiency.alpha0", optical_phase_shift, alpha0, lines)
    geometry = _wrap(
        "efficiency.geometry",
        BeamGeometry,
        waist=_num(raw, "efficiency.geometry.waist"),
        pulse_duration=_num(raw, "efficiency.geometry.pulse_duration"),
        stark_shift_peak=_num(raw, "efficiency.geometry.stark_shift_peak"),
        density_width_x=_num(raw, "efficiency.geometry.density_width_x"),
        density_width_z=_num(raw, "efficiency.geometry.density_width_z"),
    )
    branching = _get(raw, "efficiency.calibration.branching")
    eta_scatter = _wrap(
        "efficiency.calibration",
        eta_scatter_from_calibration,
        _num(raw, "efficiency.calibration.n_with_repump"),
        _num(raw, "efficiency.calibration.n_without_repump"),
        {k: float(v) for k, v in branching.items()},
    )
    chain = _wrap(
        "efficiency",
        EfficiencyChain,
        eta_noise=_num(raw, "efficiency.eta_noise"),
        eta_mm=_num(raw, "efficiency.eta_mm"),
        eta_phase=eta_phase(chi),
        eta_ac_stark=eta_ac_stark(geometry),
        eta_scatter=eta_scatter,
    )

    analysis = AnalysisConfig(
        window=_int(raw, "analysis.window", 200),
        bootstrap_resamples=_int(raw, "analysis.bootstrap_resamples", 1000),
        bootstrap_seed=_int(raw, "analysis.bootstrap_seed", 0),
        scaling_bins=_int(raw, "analysis.scaling_bins", 8),
    )
    if analysis.bootstrap_resamples < 100:
        raise ConfigError("analysis.bootstrap_resamples", "must be at least 100")

    p_click = _get(raw, "sim.p_click", None)
    p_state = _get(raw, "sim.p_state", None)
    multipliers = _get(raw, "sim.atom_number.multipliers", [1.0])
    if not isinstance(multipliers, list):
        raise ConfigError("sim.atom_number.multipliers", "expected a list")
    sim = SimConfig(
        shots=_int(raw, "sim.shots"),
        atom_number=AtomNumberModel(
            mean=_num(raw, "sim.atom_number.mean"),
            spread=_num(raw, "sim.atom_number.spread", 0.0),
            multipliers=tuple(float(m) for m in multipliers),
        ),
        noise=NoiseCoefficients(
            c_const=_num(raw, "sim.noise.c_const"),
            c_lin=_num(raw, "sim.noise.c_lin"),
            c_quad=_num(raw, "sim.noise.c_quad"),
        ),
        drift=DriftModel(
            log_variance_step=_num(raw, "sim.drift.log_variance_step", 0.0),
            common_mode_offset=_num(raw, "sim.drift.common_mode_offset", 0.0),
            common_mode_walk=_num(raw, "sim.drift.common_mode_walk", 0.0),
        ),
        p_click=budget.p_click if p_click is None else _num(raw, "sim.p_click"),
        p_state=purity(budget) if p_state is None else _num(raw, "sim.p_state"),
        eta_chain=chain,
        window=analysis.window,
        seed=_int(raw, "sim.seed", 0),
    )
    return RunConfig(
        raw=raw,
        spin=spin,
        herald=herald,
        purity_budget=budget,
        lines=lines,
        alpha0=alpha0,
        geometry=geometry,
        chain=chain,
        chi_exct=chi,
        sim=sim,
        analysis=analysis,
        herald_truncation=truncation,
    )
