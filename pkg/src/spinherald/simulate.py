"""Monte Carlo generator of synthetic heralded-excitation measurement records.

Phases are expressed in population-difference units, so the projection noise
of an unexcited ensemble is ``c_lin * N_a`` with ``c_lin = 1`` for an ideal
readout.

Every record owns a slot in a fixed-size block, and every block draws from
its own ``SeedSequence([seed, block])`` stream. Blocks can therefore be
generated in any order, or in parallel, with identical output, and the first
``k`` records do not depend on the total number of shots.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import SimConfig

N_REFS = 12
REF_OFFSETS = np.array([-6, -5, -4, -3, -2, -1, 1, 2, 3, 4, 5, 6])
BLOCK_SIZE = 4096
CSV_COLUMNS = (
    ["index", "phi_raw"]
    + [f"ref_{j}" for j in range(1, N_REFS + 1)]
    + ["click", "excitation_present", "n_atoms"]
)


@dataclass
class Dataset:
    """Column-oriented measurement records.

    ``references[:, 0:6]`` are the six shots before the probe (j = -6..-1),
    ``references[:, 6:12]`` the six after it (j = 1..6).
    """

    index: np.ndarray
    phi_raw: np.ndarray
    references: np.ndarray
    click: np.ndarray
    excitation_present: np.ndarray
    n_atoms: np.ndarray
    config_fingerprint: str = ""
    seed: int = 0

    def __len__(self) -> int:
        return len(self.index)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for i in range(len(self)):
            writer.writerow(
                [int(self.index[i]), repr(float(self.phi_raw[i]))]
                + [repr(float(v)) for v in self.references[i]]
                + [int(self.click[i]), int(self.excitation_present[i]), int(self.n_atoms[i])]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def config_fingerprint(config: SimConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True, default=float)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def ideal_shot_variance(config: SimConfig, n_atoms, excited: bool = False):
    """Per-shot variance used by the generator before drift and common mode.

    An excited shot adds the Dicke excess 2 N_a of projection noise, scaled
    by the mode-matching part of the efficiency chain (everything except
    eta_noise, which is produced by the added noise itself).
    """
    noise = config.noise
    base = noise.variance(np.asarray(n_atoms, dtype=float))
    if excited:
        base = base + 2.0 * config.eta_chain.eta_mode * noise.c_lin * np.asarray(n_atoms, dtype=float)
    return base


def reference_covariance(config: SimConfig, n_atoms: float):
    """Covariance of the 12 references and their covariance with the probe.

    The common mode is a block offset plus a random walk that starts at the
    probe slot and runs outwards independently on each side.
    """
    d = config.drift
    v = float(ideal_shot_variance(config, n_atoms))
    t = np.abs(REF_OFFSETS)
    same_side = np.sign(REF_OFFSETS)[:, None] == np.sign(REF_OFFSETS)[None, :]
    walk = d.common_mode_walk**2 * np.where(same_side, np.minimum(t[:, None], t[None, :]), 0)
    cov = d.common_mode_offset**2 + walk + v * np.eye(N_REFS)
    cross = np.full(N_REFS, d.common_mode_offset**2)
    probe_var = v + d.common_mode_offset**2
    return cov, cross, probe_var


def wiener_weights(config: SimConfig, n_atoms: float | None = None):
    """Variance-minimizing reference weights for the generator's covariance.

    Returns ``(weights, residual_variance)``; ``n_atoms`` defaults to the
    population mean, with the reference noise averaged over the atom-number
    distribution.
    """
    if n_atoms is None:
        an = config.atom_number
        noise = config.noise
        mean_var = noise.c_const + noise.c_lin * an.mean_n() + noise.c_quad * an.mean_n_sq()
        cov, cross, _ = reference_covariance(config, 0.0)
        base = float(ideal_shot_variance(config, 0.0))
        cov = cov + (mean_var - base) * np.eye(N_REFS)
        probe_var = mean_var + config.drift.common_mode_offset**2
    else:
        cov, cross, probe_var = reference_covariance(config, n_atoms)
    w = np.linalg.solve(cov, cross)
    residual = probe_var - 2 * w @ cross + w @ cov @ w
    return w, float(residual)


def predicted_noise_share(config: SimConfig) -> dict:
    """Expected decomposition of the decorrelated variance (no drift).

    Returns the own-shot projection share (the realized eta_noise), the
    share added by the reference shots, and sum(w^2).
    """
    an = config.atom_number
    w, residual = wiener_weights(config)
    proj = config.noise.c_lin * an.mean_n()
    sum_sq = float(w @ w)
    return {
        "eta_noise": proj / residual,
        "reference_projection_share": sum_sq * proj / residual,
        "sum_sq": sum_sq,
        "decorrelated_variance": residual,
    }


def predicted_click_variance(config: SimConfig) -> float:
    """1 + 2 p_state eta_mode eta_noise(realized) for the generator."""
    share = predicted_noise_share(config)["eta_noise"]
    return 1.0 + 2.0 * config.p_state * config.eta_chain.eta_mode * share


def _block(config: SimConfig, block: int):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, block]))
    b = BLOCK_SIZE
    an = config.atom_number
    draws = {
        "spread": rng.standard_normal(b),
        "click": rng.random(b),
        "state": rng.random(b),
        "probe": rng.standard_normal(b),
        "refs": rng.standard_normal((b, N_REFS)),
        "offset": rng.standard_normal(b),
        "walk": rng.standard_normal((b, N_REFS)),
        "drift": rng.standard_normal(b),
    }
    start = block * BLOCK_SIZE
    idx = np.arange(start, start + b)
    mult = np.asarray(an.multipliers)[idx % len(an.multipliers)]
    n_atoms = np.rint(np.maximum(an.mean * mult * (1 + an.spread * draws["spread"]), 1.0))
    click = draws["click"] < config.p_click
    excited = click & (draws["state"] < config.p_state)
    return idx, n_atoms, click, excited, draws


def simulate_run(config: SimConfig) -> Dataset:
    n = config.shots
    d = config.drift
    n_blocks = -(-n // BLOCK_SIZE)
    parts = [_block(config, k) for k in range(n_blocks)]
    if parts:
        idx = np.concatenate([p[0] for p in parts])[:n]
        n_atoms = np.concatenate([p[1] for p in parts])[:n]
        click = np.concatenate([p[2] for p in parts])[:n]
        excited = np.concatenate([p[3] for p in parts])[:n]
        draws = {k: np.concatenate([p[4][k] for p in parts])[:n] for k in parts[0][4]}
    else:
        idx = np.zeros(0, dtype=int)
        n_atoms = np.zeros(0)
        click = excited = np.zeros(0, dtype=bool)
        draws = {k: np.zeros((0, N_REFS)) if k in ("refs", "walk") else np.zeros(0)
                 for k in ("spread", "click", "state", "probe", "refs", "offset", "walk", "drift")}

    probe_sd = np.sqrt(np.where(excited, ideal_shot_variance(config, n_atoms, True),
                                ideal_shot_variance(config, n_atoms, False)))
    ref_sd = np.sqrt(ideal_shot_variance(config, n_atoms, False))

    offset = d.common_mode_offset * draws["offset"]
    # walk steps: columns 0..5 run outwards from j=-1 to j=-6, 6..11 from j=1 to j=6
    steps = d.common_mode_walk * draws["walk"]
    walk = np.empty_like(steps)
    walk[:, :6] = np.cumsum(steps[:, :6], axis=1)[:, ::-1]
    walk[:, 6:] = np.cumsum(steps[:, 6:], axis=1)

    log_var = np.cumsum(d.log_variance_step * draws["drift"])
    scale = np.exp(0.5 * log_var)

    phi = scale * (probe_sd * draws["probe"] + offset)
    refs = scale[:, None] * (ref_sd[:, None] * draws["refs"] + offset[:, None] + walk)

    return Dataset(
        index=idx.astype(np.int64),
        phi_raw=phi,
        references=refs,
        click=click,
        excitation_present=excited,
        n_atoms=n_atoms.astype(np.int64),
        config_fingerprint=config_fingerprint(config),
        seed=config.seed,
    )


class SchemaError(ValueError):
    def __init__(self, missing):
        super().__init__(f"dataset is missing columns: {', '.join(missing)}")
        self.missing = list(missing)


def read_dataset(path: str | Path) -> Dataset:
    """Read a CSV with the simulator's header (extra columns are ignored)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(CSV_COLUMNS) from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(missing)
        pos = [header.index(c) for c in CSV_COLUMNS]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) < len(header):
                raise ValueError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
            rows.append([row[p] for p in pos])
    table = np.array(rows, dtype=float).reshape(-1, len(CSV_COLUMNS))
    return Dataset(
        index=table[:, 0].astype(np.int64),
        phi_raw=table[:, 1],
        references=table[:, 2 : 2 + N_REFS],
        click=table[:, 2 + N_REFS].astype(bool),
        excitation_present=table[:, 3 + N_REFS].astype(bool),
        n_atoms=table[:, 4 + N_REFS].astype(np.int64),
    )
