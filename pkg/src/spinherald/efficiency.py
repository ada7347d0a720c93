"""Detection-efficiency chain for the collective-spin readout."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, asdict
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransitionLine:
    detuning: float
    strength: float
    linewidth: float
    label: str = ""

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError("transition strength must be non-negative")
        if self.linewidth <= 0:
            raise ValueError("linewidth must be positive")


@dataclass(frozen=True)
class BeamGeometry:
    """Excitation beam and atomic column density in the transverse plane.

    Lengths in metres, ``pulse_duration`` in seconds and ``stark_shift_peak``
    in rad/s. ``waist = inf`` means a spatially uniform intensity.
    """

    waist: float
    pulse_duration: float
    stark_shift_peak: float
    density_width_x: float
    density_width_z: float

    def __post_init__(self):
        for name in ("waist", "pulse_duration", "density_width_x", "density_width_z"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.stark_shift_peak < 0:
            raise ValueError("stark_shift_peak must be non-negative")


@dataclass(frozen=True)
class EfficiencyChain:
    eta_noise: float
    eta_mm: float
    eta_phase: float
    eta_ac_stark: float
    eta_scatter: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @property
    def eta_inhom(self) -> float:
        return self.eta_phase * self.eta_ac_stark

    @property
    def eta_mode(self) -> float:
        """Everything except the added-noise factor eta_noise."""
        return self.eta_mm * self.eta_inhom * self.eta_scatter

    @property
    def total(self) -> float:
        return total_efficiency(self)


def optical_phase_shift(alpha0: float, lines: Iterable[TransitionLine]) -> float:
    """Dispersive phase (rad) for resonant optical depth ``alpha0``.

    Detunings are measured in units of each line's natural linewidth, which
    makes the Lorentzian dispersion term dimensionless.
    """
    if alpha0 < 0:
        raise ValueError("optical depth must be non-negative")
    total = 0.0
    for line in lines:
        d = line.detuning / line.linewidth
        total += line.strength * d / (d * d + 0.25)
    return alpha0 / 4.0 * total


def strength_scale_for(alpha0: float, lines: Sequence[TransitionLine], target: float) -> float:
    """Common factor on all line strengths that reproduces a target phase."""
    base = optical_phase_shift(alpha0, lines)
    if base == 0:
        raise ValueError("line table produces no phase shift; cannot calibrate")
    return target / base


def eta_phase(chi_exct: float) -> float:
    """sinc^2(chi/2) visibility of a linear phase ramp ending at chi."""
    half = 0.5 * chi_exct
    if half == 0:
        return 1.0
    return (math.sin(half) / half) ** 2


def _stark_overlap(geom: BeamGeometry, order: int, time_steps: int) -> float:
    sx, sz = geom.density_width_x, geom.density_width_z
    w = geom.waist
    if math.isinf(w):
        # uniform light shift: only a global phase
        return 1.0
    # rho * I^2 is Gaussian with variance (1/s^2 + 8/w^2)^-1 per axis
    ex = 1.0 / math.sqrt(1.0 / sx**2 + 8.0 / w**2)
    ez = 1.0 / math.sqrt(1.0 / sz**2 + 8.0 / w**2)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    x, wx = 7.0 * ex * nodes, 7.0 * ex * weights
    z, wz = 7.0 * ez * nodes, 7.0 * ez * weights
    xx, zz = np.meshgrid(x, z, indexing="ij")
    intensity = np.exp(-2.0 * (xx**2 + zz**2) / w**2)
    rho = np.exp(-0.5 * (xx / sx) ** 2 - 0.5 * (zz / sz) ** 2)
    mass = (rho * intensity**2 * np.outer(wx, wz)).ravel()
    omega = geom.stark_shift_peak * intensity.ravel()
    t = np.linspace(0.0, geom.pulse_duration, time_steps + 1)
    overlap = np.exp(-1j * np.outer(t, omega)) @ mass
    norm = mass.sum() ** 2
    return float(simpson(np.abs(overlap) ** 2, x=t) / (geom.pulse_duration * norm))


def eta_ac_stark(
    geom: BeamGeometry,
    tol: float = 1e-6,
    time_steps: int = 200,
    min_order: int = 16,
    max_order: int = 512,
) -> float:
    """Time-averaged squared overlap of the light-shifted spin wave.

    Tensor-product Gauss-Legendre in the transverse plane, doubled until two
    successive orders agree to ``tol``; Simpson's rule in time on
    ``time_steps`` uniform intervals, cross-checked against twice as many.
    """
    if geom.stark_shift_peak == 0 or math.isinf(geom.waist):
        return 1.0
    order = min_order
    previous = _stark_overlap(geom, order, time_steps)
    while True:
        order *= 2
        if order > max_order:
            raise ConvergenceError(
                f"ac-Stark overlap did not converge to {tol} by order {max_order}"
            )
        current = _stark_overlap(geom, order, time_steps)
        if abs(current - previous) < tol:
            break
        previous = current
    fine = _stark_overlap(geom, order, 2 * time_steps)
    if abs(fine - current) > 1e-4:
        warnings.warn(
            f"time quadrature changes eta_ac_stark by {abs(fine - current):.2e}; "
            "increase time_steps",
            RuntimeWarning,
        )
        return fine
    return current


def stark_shift_for(geom: BeamGeometry, target: float, upper: float | None = None) -> float:
    """Peak light shift (rad/s) that gives ``eta_ac_stark == target``."""
    if not 0.0 < target < 1.0:
        raise ValueError("target efficiency must lie in (0, 1)")

    def f(shift):
        g = BeamGeometry(geom.waist, geom.pulse_duration, shift, geom.density_width_x, geom.density_width_z)
        return eta_ac_stark(g) - target

    hi = upper if upper is not None else 1.0 / geom.pulse_duration
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e6 / geom.pulse_duration:
            raise ValueError("target efficiency not reachable")
    return brentq(f, 0.0, hi, xtol=1e-9 / geom.pulse_duration)


def detected_without_repump(label: str) -> bool:
    """Channels counted without repumping after the clock pi pulse.

    Labels look like ``"F4m1"``. After the pi pulse |F=3, m=0> is counted in
    F=4, |F=4, m=0> is moved out of it, and F=4 states with m != 0 stay.
    """
    f_part, m_part = label.upper().lstrip("F").split("M")
    f, m = int(f_part), int(m_part)
    return (f == 4 and m != 0) or (f == 3 and m == 0)


def scatter_fraction(
    n_with_repump: float,
    n_without_repump: float,
    branching: Mapping[str, float],
    detected: Iterable[str] | None = None,
) -> float:
    """Fraction of atoms that scattered an excitation photon.

    Forward model: n_without / n_with = s * f_det, with f_det the branching
    fraction into channels that are counted without repumping.
    """
    if n_with_repump <= 0 or n_without_repump < 0:
        raise ValueError("atom counts must be positive")
    total = sum(branching.values())
    if not math.isclose(total, 1.0, abs_tol=1e-6):
        raise ValueError(f"branching fractions sum to {total}, expected 1")
    if detected is None:
        detected = [k for k in branching if detected_without_repump(k)]
    f_det = sum(branching[k] for k in detected)
    ratio = n_without_repump / n_with_repump
    if ratio > 1:
        raise ValueError("more atoms counted without repump than with it")
    if ratio == 0:
        return 0.0
    if f_det <= 0:
        raise ValueError("no detectable decay channel in the branching table")
    s = ratio / f_det
    if s > 1:
        raise ValueError(
            f"calibration implies a scattered fraction of {s:.3f} > 1; counts and "
            "branching table are inconsistent"
        )
    return s


def eta_scatter_from_calibration(
    n_with_repump: float,
    n_without_repump: float,
    branching: Mapping[str, float],
    detected: Iterable[str] | None = None,
) -> float:
    return 1.0 - scatter_fraction(n_with_repump, n_without_repump, branching, detected)


def total_efficiency(chain: EfficiencyChain) -> float:
    return chain.eta_noise * chain.eta_mm * chain.eta_phase * chain.eta_ac_stark * chain.eta_scatter
