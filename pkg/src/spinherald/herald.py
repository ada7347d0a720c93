"""Photon-counting statistics of the heralding channel.

Three independent click sources are combined: thermal Stokes photons in the
desired decay channel (p0), thermal photons in the unfilterable m_F = +-2
channel (p2), and Poissonian false positives (dark counts plus excitation
leakage, mean pf). Each Stokes photon produces a click with probability pd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom, poisson


@dataclass(frozen=True)
class HeraldParams:
    p0: float
    p2: float
    pd: float
    pf: float

    def __post_init__(self):
        for name in ("p0", "p2", "pf"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {value}")
        if not 0.0 < self.pd <= 1.0:
            raise ValueError(f"pd must lie in (0, 1], got {self.pd}")

    @property
    def pd_miss(self) -> float:
        return 1.0 - self.pd

    @classmethod
    def from_experiment(
        cls,
        p0: float = 0.014,
        p2_ratio: float = 0.3,
        pd: float = 0.8**2 * 0.56 * 0.5,
        pf_dark: float = 0.13 * 6.7e-3,
        pf_exct: float = 0.38 * 6.7e-3,
    ) -> "HeraldParams":
        """Parameters as they are quoted for the experiment (p2 = ratio * p0)."""
        return cls(p0=p0, p2=p2_ratio * p0, pd=pd, pf=pf_dark + pf_exct)


@dataclass(frozen=True)
class ClickPosterior:
    probabilities: np.ndarray
    truncation_mass: float
    p_one_click: float = float("nan")

    def __getitem__(self, n: int) -> float:
        return float(self.probabilities[n])

    @property
    def n_max(self) -> int:
        return len(self.probabilities) - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.probabilities)), self.probabilities))


@dataclass(frozen=True)
class PurityBudget:
    p_click: float
    p_dark: float
    p_exct: float
    p_decay: float

    def __post_init__(self):
        terms = (self.p_dark, self.p_exct, self.p_decay)
        if self.p_click < 0 or any(t < 0 for t in terms):
            raise ValueError("purity budget terms must be non-negative")
        if sum(terms) > self.p_click * (1 + 1e-12):
            raise ValueError("false-positive terms exceed the click probability")

    @classmethod
    def from_fractions(cls, p_click: float, dark: float, exct: float, decay: float):
        return cls(p_click, dark * p_click, exct * p_click, decay * p_click)


def thermal_pmf(p0: float, n: int) -> float:
    if not 0.0 <= p0 < 1.0:
        raise ValueError(f"thermal parameter must lie in [0, 1), got {p0}")
    return (1.0 - p0) * p0**n


def poisson_pmf(pf: float, n: int) -> float:
    if pf < 0:
        raise ValueError("Poisson mean must be non-negative")
    return pf**n * math.exp(-pf) / math.factorial(n)


def thinned_thermal_click_pmf(p2: float, pd: float, n: int) -> float:
    """Clicks from a thermal source after independent per-photon detection pd."""
    miss = 1.0 - pd
    return (1.0 - p2) * (p2 * pd) ** n / (1.0 - p2 * miss) ** (n + 1)


def false_positive_pmf(params: HeraldParams, n: int) -> float:
    """P(n false-positive clicks), n in {0, 1}."""
    if n == 0:
        return poisson_pmf(params.pf, 0) * thinned_thermal_click_pmf(params.p2, params.pd, 0)
    if n == 1:
        return poisson_pmf(params.pf, 1) * thinned_thermal_click_pmf(
            params.p2, params.pd, 0
        ) + poisson_pmf(params.pf, 0) * thinned_thermal_click_pmf(params.p2, params.pd, 1)
    raise ValueError("only zero or one false positive enters the single-click condition")


def p_one_click_given_n(params: HeraldParams, n: int) -> float:
    miss = params.pd_miss
    pf0 = false_positive_pmf(params, 0)
    pf1 = false_positive_pmf(params, 1)
    detected_one = n * params.pd * miss ** (n - 1) * pf0 if n > 0 else 0.0
    return detected_one + miss**n * pf1


def click_posterior(params: HeraldParams, n_max: int = 8) -> ClickPosterior:
    """Closed-form p(n | exactly one click) for n = 0..n_max."""
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    pd, miss, p0, p2, pf = params.pd, params.pd_miss, params.p0, params.p2, params.pf
    false_rate = pf + pd * p2 / (1.0 - miss * p2)
    denominator = false_rate + pd * p0 / (1.0 - miss * p0)
    if denominator <= 0:
        raise ValueError("parameters give zero single-click probability")
    n = np.arange(n_max + 1)
    x = miss * p0
    # n pd miss^(n-1) p0^n, written without dividing by miss so pd = 1 works
    detected = np.zeros(n_max + 1)
    detected[1:] = n[1:] * pd * miss ** (n[1:] - 1) * p0 ** n[1:]
    post = (1.0 - x) * (detected + x**n * false_rate) / denominator
    m = n_max + 1
    # closed-form tail: sum_{n >= m} n x^(n-1) = (m x^(m-1) (1-x) + x^m) / (1-x)^2
    tail_detected = pd * p0 * (m * x ** (m - 1) * (1.0 - x) + x**m) / (1.0 - x) ** 2
    tail = (1.0 - x) * (tail_detected + false_rate * x**m / (1.0 - x)) / denominator
    p_one = _p_one_click(params, denominator)
    return ClickPosterior(post, float(tail), p_one)


def _p_one_click(params: HeraldParams, denominator: float) -> float:
    """Normalizing p(1 click) = pF(0) (1 - p0) / (1 - miss p0) * denominator."""
    x = params.pd_miss * params.p0
    return false_positive_pmf(params, 0) * (1.0 - params.p0) / (1.0 - x) * denominator


def posterior_bruteforce(params: HeraldParams, n_max: int = 8, k_max: int = 500) -> ClickPosterior:
    """p(n | 1 click) by explicit enumeration.

    Sums over desired photons n, unwanted-channel photons k, and false counts
    f, with binomial thinning of both photon populations, keeping outcomes that
    produce exactly one click in total.
    """
    pd = params.pd
    k = np.arange(k_max + 1)
    thermal2 = (1.0 - params.p2) * params.p2**k
    # detected clicks from the unwanted channel: 0 or 1
    d2 = np.array([np.sum(thermal2 * binom.pmf(c, k, pd)) for c in (0, 1)])
    fals = poisson.pmf([0, 1], params.pf)
    n_all = np.arange(k_max + 1)
    prior = (1.0 - params.p0) * params.p0**n_all
    joint = np.zeros(k_max + 1)
    for c_desired in (0, 1):
        p_desired = binom.pmf(c_desired, n_all, pd)
        for c_unwanted in (0, 1):
            for c_false in (0, 1):
                if c_desired + c_unwanted + c_false != 1:
                    continue
                joint += prior * p_desired * d2[c_unwanted] * fals[c_false]
    p_one = float(joint.sum())
    if p_one <= 0:
        raise ValueError("parameters give zero single-click probability")
    post = joint / p_one
    truncation = float(params.p0 ** (k_max + 1) + params.p2 ** (k_max + 1))
    tail = float(post[n_max + 1:].sum())
    return ClickPosterior(post[: n_max + 1], tail + truncation, p_one)


def purity(budget: PurityBudget) -> float:
    if budget.p_click <= 0:
        raise ValueError("p_click must be positive")
    return 1.0 - (budget.p_dark + budget.p_decay + budget.p_exct) / budget.p_click


def multi_excitation_inflation(
    post: ClickPosterior, eta: float = 1.0, renormalize: bool = True
) -> float:
    """Fractional increase of 1 + 2 eta <n> caused by the n >= 2 tail.

    The reference keeps only the n <= 1 entries, renormalized onto {0, 1}
    unless ``renormalize`` is False, in which case the tail is simply dropped.
    """
    p = np.asarray(post.probabilities, dtype=float)
    n = np.arange(len(p))
    full = 1.0 + 2.0 * eta * np.dot(n, p)
    single = p[1] / (p[0] + p[1]) if renormalize else p[1]
    truncated = 1.0 + 2.0 * eta * single
    return float(full / truncated - 1.0)


def two_excitation_vs_coherent(post: ClickPosterior) -> float:
    """p(2 | click) relative to a Poisson (coherent) state of equal mean."""
    mean = post.mean()
    coherent = poisson_pmf(mean, 2)
    return float(post[2] / coherent)
