"""Statistical pipeline: reference decorrelation, local noise normalization,
variance estimates with uncertainties, and the noise-scaling decomposition.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import nnls

from .simulate import Dataset


@dataclass
class WeightVector:
    weights: np.ndarray
    stderr: np.ndarray
    sum_sq: float
    rank_deficient: bool = False


@dataclass
class NormalizedSeries:
    z_values: np.ndarray
    y_values: np.ndarray
    window: int

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.z_values)


@dataclass
class VarianceReport:
    w: float
    uncertainty: float
    sample_count: int
    method: str = "analytic"
    ci_low: float = float("nan")
    ci_high: float = float("nan")

    def as_dict(self) -> dict:
        out = {"value": self.w, "err": self.uncertainty, "L": self.sample_count, "method": self.method}
        if self.method == "bootstrap":
            out["ci95"] = [self.ci_low, self.ci_high]
        return out


@dataclass
class ScalingFit:
    c_const: float
    c_lin: float
    c_quad: float
    stderr: tuple[float, float, float]
    r2: float
    projected: bool = False
    condition: float = float("nan")
    ill_conditioned: bool = False
    bins: dict = field(default_factory=dict)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.c_const, self.c_lin, self.c_quad])

    def variance(self, n_atoms):
        n = np.asarray(n_atoms, dtype=float)
        return self.c_const + self.c_lin * n + self.c_quad * n**2

    def fractions(self, n_atoms: float) -> dict:
        """Share of constant, linear and quadratic noise at one atom number."""
        parts = np.array([self.c_const, self.c_lin * n_atoms, self.c_quad * n_atoms**2])
        parts = parts / parts.sum()
        return {"constant": parts[0], "linear": parts[1], "quadratic": parts[2]}

    def as_dict(self) -> dict:
        return {
            "c_const": self.c_const,
            "c_lin": self.c_lin,
            "c_quad": self.c_quad,
            "stderr": list(self.stderr),
            "r2": self.r2,
            "projected": self.projected,
            "condition": self.condition,
            "ill_conditioned": self.ill_conditioned,
        }


def decorrelate(phi_raw, references) -> tuple[np.ndarray, WeightVector]:
    """Subtract the least-squares combination of reference shots.

    The weights minimize the sample variance of ``phi_raw - references @ w``,
    i.e. ordinary least squares with an intercept. A rank-deficient reference
    matrix falls back to the minimum-norm solution with a warning.
    """
    phi_raw = np.asarray(phi_raw, dtype=float)
    refs = np.asarray(references, dtype=float)
    if refs.ndim != 2 or refs.shape[0] != phi_raw.shape[0]:
        raise ValueError("references must be an (n_records, n_refs) array")
    n, k = refs.shape
    if n <= k + 1:
        raise ValueError(f"need more than {k + 1} records to fit {k} weights, got {n}")
    rc = refs - refs.mean(axis=0)
    yc = phi_raw - phi_raw.mean()
    w, _, rank, sv = np.linalg.lstsq(rc, yc, rcond=None)
    deficient = rank < k
    if deficient:
        warnings.warn(
            f"reference covariance is singular (rank {rank} < {k}); using the minimum-norm weights",
            RuntimeWarning,
        )
    resid = yc - rc @ w
    dof = max(n - rank - 1, 1)
    sigma2 = resid @ resid / dof
    gram_inv = np.linalg.pinv(rc.T @ rc)
    stderr = np.sqrt(np.clip(np.diag(gram_inv) * sigma2, 0, None))
    phi = phi_raw - refs @ w
    return phi, WeightVector(w, stderr, float(w @ w), bool(deficient))


def local_normalize(phi, window: int = 200) -> NormalizedSeries:
    """Z_i = phi_i / sqrt(Y_i), Y_i the sample variance of phi_{i-M/2..i+M/2}.

    The first and last M/2 points have no full window and are marked invalid
    (NaN), as is any point whose window has zero variance.
    """
    phi = np.asarray(phi, dtype=float)
    if window < 2 or window % 2:
        raise ValueError(f"window must be an even integer >= 2, got {window}")
    if len(phi) <= window:
        raise ValueError(f"window M={window} needs a series longer than M, got {len(phi)} points")
    y = pd.Series(phi).rolling(window + 1, center=True).var(ddof=1).to_numpy()
    with np.errstate(divide="ignore", invalid="ignore"):
        z = phi / np.sqrt(y)
    z[~(y > 0)] = np.nan
    return NormalizedSeries(z, y, window)


def _selected(z_values, selection) -> np.ndarray:
    z = np.asarray(z_values, dtype=float)
    if selection is None:
        sel = np.ones(len(z), dtype=bool)
    else:
        sel = np.asarray(selection, dtype=bool)
    return z[sel & np.isfinite(z)]


def estimator_mse_check(count: int) -> float:
    """Relative standard error sqrt(2/(count-1)) of a sample variance."""
    if count < 2:
        raise ValueError("need at least two samples")
    return math.sqrt(2.0 / (count - 1))


def zi_variance_correction(window: int) -> float:
    """Inflation of var(Z_i) from the finite-window estimate of Y_i."""
    return 1.0 + 0.25 * 2.0 / (window + 1)


def variance_report(z_values, selection=None) -> VarianceReport:
    sample = _selected(z_values, selection)
    L = len(sample)
    if L < 2:
        raise ValueError(f"need at least two selected samples, got {L}")
    w = float(np.var(sample, ddof=1))
    return VarianceReport(w, estimator_mse_check(L) * w, L, "analytic")


def analytic_error_reliable(selection, window: int, valid=None) -> bool:
    """Whether the independent-sample error formula applies to a selection.

    Z_i inside one window are correlated through the shared Y_i, so the
    analytic error is trusted only when the set is much larger than the
    window or its members are spaced farther apart than the window.
    """
    sel = np.asarray(selection, dtype=bool)
    if valid is not None:
        sel = sel & np.asarray(valid, dtype=bool)
    idx = np.flatnonzero(sel)
    if len(idx) < 2:
        return False
    if len(idx) >= 10 * window:
        return True
    return float(np.mean(np.diff(idx))) >= window


def bootstrap_variance(
    z_values, selection=None, resamples: int = 1000, seed: int = 0, chunk_elems: int = 4_000_000
) -> VarianceReport:
    """Variance with its error from resampling with replacement."""
    if resamples < 100:
        raise ValueError("use at least 100 bootstrap resamples")
    sample = _selected(z_values, selection)
    L = len(sample)
    if L < 2:
        raise ValueError(f"need at least two selected samples, got {L}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, L]))
    rows = max(1, chunk_elems // L)
    stats = np.empty(resamples)
    for start in range(0, resamples, rows):
        stop = min(start + rows, resamples)
        idx = rng.integers(0, L, size=(stop - start, L))
        stats[start:stop] = np.var(sample[idx], axis=1, ddof=1)
    w = float(np.var(sample, ddof=1))
    lo, hi = np.percentile(stats, [2.5, 97.5])
    return VarianceReport(w, float(np.std(stats, ddof=1)), L, "bootstrap", float(lo), float(hi))


def cumulative_variance(z_values, selection=None, min_count: int = 10):
    """Running sample variance against the number of observations."""
    sample = _selected(z_values, selection)
    n = np.arange(1, len(sample) + 1)
    s1 = np.cumsum(sample)
    s2 = np.cumsum(sample**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = (s2 - s1**2 / n) / (n - 1)
    keep = n >= min_count
    return n[keep], var[keep]


def bin_by_atom_number(n_atoms, phi, n_bins: int = 8) -> dict:
    """Per-bin variance of phi, with bin means of N and N^2.

    Distinct atom numbers form their own bins when there are at most
    ``n_bins`` of them; otherwise quantile bins are used.
    """
    n_atoms = np.asarray(n_atoms, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ok = np.isfinite(phi)
    n_atoms, phi = n_atoms[ok], phi[ok]
    levels = np.unique(n_atoms)
    if len(levels) <= n_bins:
        labels = np.searchsorted(levels, n_atoms)
        n_groups = len(levels)
    else:
        edges = np.quantile(n_atoms, np.linspace(0, 1, n_bins + 1))
        labels = np.clip(np.searchsorted(edges, n_atoms, side="right") - 1, 0, n_bins - 1)
        n_groups = n_bins
    rows = {"n_mean": [], "n_sq_mean": [], "variance": [], "count": []}
    for g in range(n_groups):
        m = labels == g
        if m.sum() < 2:
            continue
        rows["n_mean"].append(n_atoms[m].mean())
        rows["n_sq_mean"].append(np.mean(n_atoms[m] ** 2))
        rows["variance"].append(np.var(phi[m], ddof=1))
        rows["count"].append(int(m.sum()))
    return {k: np.asarray(v) for k, v in rows.items()}


def noise_scaling_fit(n_atoms, phi, n_bins: int = 8, max_condition: float = 1e10) -> ScalingFit:
    """Weighted least-squares fit of var(phi) = c0 + c1 N + c2 N^2 over bins.

    Bin weights are 1/dV^2 with dV = sqrt(2/(n-1)) V. Negative coefficients
    are removed by refitting with non-negative least squares, which sets the
    ``projected`` flag.
    """
    bins = bin_by_atom_number(n_atoms, phi, n_bins)
    if len(bins["variance"]) < 4:
        raise ValueError(f"need at least 4 atom-number bins, got {len(bins['variance'])}")
    v = bins["variance"]
    dv = np.sqrt(2.0 / (bins["count"] - 1)) * v
    x = np.column_stack([np.ones_like(v), bins["n_mean"], bins["n_sq_mean"]])
    scale = np.abs(x).max(axis=0)
    sw = 1.0 / dv
    a = x / scale * sw[:, None]
    b = v * sw
    condition = float(np.linalg.cond(a))
    ill = condition > max_condition
    if ill:
        warnings.warn(f"noise-scaling design matrix is ill-conditioned (cond={condition:.2e})", RuntimeWarning)
    beta, *_ = np.linalg.lstsq(a, b, rcond=None)
    projected = bool(np.any(beta < 0))
    if projected:
        beta, _ = nnls(a, b)
    cov = np.linalg.pinv(a.T @ a)
    coef = beta / scale
    se = np.sqrt(np.diag(cov)) / scale
    resid = b - a @ beta
    wmean = np.sum(sw**2 * v) / np.sum(sw**2)
    ss_tot = np.sum((sw * (v - wmean)) ** 2)
    r2 = float(1.0 - resid @ resid / ss_tot) if ss_tot > 0 else float("nan")
    return ScalingFit(
        float(coef[0]), float(coef[1]), float(coef[2]), tuple(float(s) for s in se),
        r2, projected, condition, ill, bins,
    )


@dataclass
class PipelineResult:
    """Report payload plus the intermediate series the figures are drawn from."""

    report: dict
    phi: np.ndarray
    series: NormalizedSeries
    click: np.ndarray
    fit: ScalingFit | None = None


def run_pipeline(
    dataset: Dataset,
    window: int = 200,
    resamples: int = 1000,
    seed: int = 0,
    n_bins: int = 8,
) -> PipelineResult:
    """Full pipeline on one dataset."""
    if len(dataset) <= window:
        raise ValueError(f"window M={window} needs more than M records, dataset has {len(dataset)}")
    phi, weights = decorrelate(dataset.phi_raw, dataset.references)
    series = local_normalize(phi, window)
    valid = series.valid
    click = np.asarray(dataset.click, dtype=bool)

    out: dict = {
        "counts": {
            "records": int(len(dataset)),
            "valid": int(valid.sum()),
            "click": int((click & valid).sum()),
            "no_click": int((~click & valid).sum()),
        },
        "window": window,
        "weights": weights.weights.tolist(),
        "weights_stderr": weights.stderr.tolist(),
        "sum_sq": weights.sum_sq,
        "variance_reduction": float(np.var(phi) / np.var(dataset.phi_raw)),
        "zi_variance_correction": zi_variance_correction(window),
    }
    out["var_noclick"] = variance_report(series.z_values, ~click).as_dict()
    out["var_click"] = variance_report(series.z_values, click).as_dict()
    out["bootstrap"] = {
        "no_click": bootstrap_variance(series.z_values, ~click, resamples, seed).as_dict(),
        "click": bootstrap_variance(series.z_values, click, resamples, seed + 1).as_dict(),
    }
    reliable = {
        "no_click": analytic_error_reliable(~click, window, valid),
        "click": analytic_error_reliable(click, window, valid),
    }
    out["analytic_error_reliable"] = reliable
    out["preferred_method"] = {k: "analytic" if v else "bootstrap" for k, v in reliable.items()}
    fit = None
    try:
        fit = noise_scaling_fit(dataset.n_atoms[~click], phi[~click], n_bins)
        out["scaling_fit"] = fit.as_dict()
        out["scaling_fit"]["fractions_at_mean_n"] = fit.fractions(float(np.mean(dataset.n_atoms)))
    except ValueError as exc:
        out["scaling_fit"] = {"error": str(exc)}
    return PipelineResult(out, phi, series, click, fit)


def analyze(
    dataset: Dataset,
    window: int = 200,
    resamples: int = 1000,
    seed: int = 0,
    n_bins: int = 8,
) -> dict:
    """Full pipeline on one dataset; returns the analysis JSON payload."""
    return run_pipeline(dataset, window, resamples, seed, n_bins).report
