"""Collective-spin mathematics for rotated Dicke states.

All variances are quoted in population-difference units, var(dN) = 4 var(J_z),
and mixture variances are normalized to the coherent-state value N_a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

EXACT_MODE_CAP = 4096


@dataclass(frozen=True)
class CollectiveSpinState:
    n_atoms: int
    excitation: int = 0

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ValueError(f"n_atoms must be a positive integer, got {self.n_atoms!r}")
        if int(self.excitation) != self.excitation or not 0 <= self.excitation <= self.n_atoms:
            raise ValueError(
                f"excitation must be an integer in [0, n_atoms={self.n_atoms}], "
                f"got {self.excitation!r}"
            )

    @property
    def total_spin(self) -> float:
        return self.n_atoms / 2

    @property
    def initial_m(self) -> float:
        return self.total_spin - self.excitation


@dataclass(frozen=True)
class JzDistribution:
    """Marginal of J_z over m = -J..J (ascending)."""

    support: np.ndarray
    probabilities: np.ndarray

    @property
    def delta_n(self) -> np.ndarray:
        return 2 * self.support

    def mean(self) -> float:
        return float(np.dot(self.probabilities, self.delta_n))


@dataclass(frozen=True)
class DickeMixture:
    weights: Mapping[int, float]
    n_atoms: int = 1
    detection_efficiency: float = 1.0

    def __post_init__(self):
        w = dict(self.weights)
        if any(p < 0 for p in w.values()):
            raise ValueError("mixture weights must be non-negative")
        if any(int(n) != n or n < 0 for n in w):
            raise ValueError("excitation numbers must be non-negative integers")
        if not math.isclose(sum(w.values()), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"mixture weights sum to {sum(w.values())}, expected 1")
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise ValueError("detection_efficiency must lie in [0, 1]")
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be positive")

    @classmethod
    def heralded(cls, p: float, n_atoms: int = 1, detection_efficiency: float = 1.0):
        """Two-component mixture p|1><1| + (1-p)|0><0|."""
        return cls({0: 1.0 - p, 1: p}, n_atoms, detection_efficiency)


def _centered_log_binom(a: int) -> np.ndarray:
    """log C(a, b) - log C(a, a//2) for b = 0..a.

    Built by outward cumulative sums from the centre so the values stay small
    where the probability mass sits; this keeps the absolute log error near
    machine epsilon instead of eps * log C(a, a/2).
    """
    b = np.arange(a + 1, dtype=float)
    h = a // 2
    out = np.zeros(a + 1)
    if a > h:
        out[h + 1:] = np.cumsum(np.log((a - b[h:a]) / (b[h:a] + 1.0)))
    if h > 0:
        down = -np.log((a - b[:h]) / (b[:h] + 1.0))
        out[:h] = np.cumsum(down[::-1])[::-1]
    return out


def _quarter_turn_pmf(n_atoms: int, excitation: int) -> np.ndarray:
    """Exact pmf over k = N_up after a pi/2 rotation.

    The amplitude is proportional to the Krawtchouk polynomial K_k(n), the
    coefficient of t^k in (1 - t)^n (1 + t)^(N - n), so
        P(k) = C(N, n) K_k(n)^2 / (C(N, k) 2^N).
    Everything is done in integers and each probability is a single correctly
    rounded int/int division.
    """
    N, n = n_atoms, excitation
    kraw = [0] * (N + 1)
    kraw[0] = 1
    if N >= 1:
        kraw[1] = N - 2 * n
    for k in range(1, N):
        num = (N - 2 * n) * kraw[k] - (N - k + 1) * kraw[k - 1]
        kraw[k + 1] = num // (k + 1)
    c_nn = math.comb(N, n)
    denom_base = 1 << N
    pmf = np.empty(N + 1)
    c_nk = 1
    for k in range(N + 1):
        pmf[k] = (c_nn * kraw[k] * kraw[k]) / (c_nk * denom_base)
        c_nk = c_nk * (N - k) // (k + 1)
    return pmf


def _wigner_column_pmf(n_atoms: int, excitation: int, angle: float) -> np.ndarray:
    """|d^J_{m, J-n}(angle)|^2 over k = J + m for a generic angle.

    Wigner's sum has at most n + 1 terms for this column; it is accumulated
    in the log domain with a per-k max shift to avoid under/overflow.
    """
    N, n = n_atoms, excitation
    c = math.cos(angle / 2)
    s = math.sin(angle / 2)
    k = np.arange(N + 1)
    pmf = np.zeros(N + 1)
    if abs(s) < 1e-300:
        pmf[N - n] = 1.0
        return pmf
    if abs(c) < 1e-300:
        pmf[n] = 1.0
        return pmf
    log_tan = math.log(abs(s)) - math.log(abs(c))
    log_cn = _centered_log_binom(N)
    log_cm = _centered_log_binom(N - n)
    log_terms = np.full((n + 1, N + 1), -np.inf)
    signs = np.zeros((n + 1, N + 1))
    for t in range(n + 1):
        j = k - t
        ok = (j >= 0) & (j <= N - n)
        if not ok.any():
            continue
        sin_pow = N - n - k + 2 * t
        cos_pow = n + k - 2 * t
        log_terms[t, ok] = (
            math.log(math.comb(n, t))
            + log_cm[j[ok]]
            - 0.5 * log_cn[ok]
            + sin_pow[ok] * log_tan
        )
        sign = np.where((N - n - k + t) % 2 == 0, 1.0, -1.0)
        if s < 0:
            sign = sign * np.where(sin_pow % 2 == 1, -1.0, 1.0)
        if c < 0:
            sign = sign * np.where(cos_pow % 2 == 1, -1.0, 1.0)
        signs[t] = np.where(ok, sign, 0.0)
    shift = log_terms.max(axis=0)
    with np.errstate(invalid="ignore"):
        amp = np.sum(signs * np.exp(log_terms - shift), axis=0)
    with np.errstate(divide="ignore"):
        log_p = 2 * np.log(np.abs(amp)) + 2 * shift
    log_p -= log_p.max()
    pmf = np.exp(log_p)
    return pmf / pmf.sum()


def _is_quarter_turn(angle: float) -> bool:
    return math.isclose(math.cos(angle), 0.0, abs_tol=1e-15)


def rotated_dicke_distribution(
    state: CollectiveSpinState, angle: float = math.pi / 2, max_atoms: int = EXACT_MODE_CAP
) -> JzDistribution:
    """J_z marginal of the Dicke state |J, J - n> rotated about y by ``angle``."""
    if not math.isfinite(angle):
        raise ValueError("rotation angle must be finite")
    if state.n_atoms > max_atoms:
        raise ValueError(
            f"exact rotation requested for n_atoms={state.n_atoms}, above the exact-mode "
            f"cap of {max_atoms}; use the Holstein-Primakoff formulas instead"
        )
    if _is_quarter_turn(angle):
        pmf = _quarter_turn_pmf(state.n_atoms, state.excitation)
    else:
        pmf = _wigner_column_pmf(state.n_atoms, state.excitation, angle)
    support = np.arange(state.n_atoms + 1) - state.n_atoms / 2
    return JzDistribution(support, pmf)


def jz_variance(dist: JzDistribution) -> float:
    """var(dN) = 4 var(J_z)."""
    dn = dist.delta_n
    p = dist.probabilities
    mean = np.dot(p, dn)
    return float(np.dot(p, (dn - mean) ** 2))


def quarter_turn_variance(n_atoms: int, excitation: int) -> float:
    """Closed form var(dN) = 2 (J(J+1) - m^2) after a pi/2 pulse."""
    j = n_atoms / 2
    m = j - excitation
    return 2.0 * (j * (j + 1) - m * m)


def mixture_variance(mix: DickeMixture) -> float:
    """var(dN)/N_a of a Dicke mixture seen through efficiency eta (HP limit)."""
    mean_n = sum(n * p for n, p in mix.weights.items())
    return 1.0 + 2.0 * mix.detection_efficiency * mean_n


def hp_limit_check(n_atoms_list: Iterable[int], excitation: int) -> list[dict]:
    """Exact var(dN)/N_a next to the Holstein-Primakoff value 2n + 1."""
    rows = []
    for n_atoms in n_atoms_list:
        dist = rotated_dicke_distribution(CollectiveSpinState(n_atoms, excitation))
        ratio = jz_variance(dist) / n_atoms
        rows.append(
            {
                "n_atoms": n_atoms,
                "excitation": excitation,
                "normalized_variance": ratio,
                "hp_limit": 2 * excitation + 1,
                "deviation": ratio - (2 * excitation + 1),
            }
        )
    return rows
