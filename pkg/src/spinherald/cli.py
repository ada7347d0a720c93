"""Command-line driver: simulate, analyze, reproduce and oracle subcommands.

Exit codes: 0 success, 1 invalid input (config, dataset schema, window),
2 a reproduction target failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import plotting
from .analysis import run_pipeline
from .config import ConfigError, RunConfig, load_config
from .dicke import CollectiveSpinState, jz_variance, quarter_turn_variance, rotated_dicke_distribution
from .herald import HeraldParams, click_posterior, posterior_bruteforce, thermal_pmf, thinned_thermal_click_pmf
from .reproduce import format_table, reproduce, to_csv
from .simulate import SchemaError, read_dataset, simulate_run

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_TARGET = 2


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _overrides(args) -> dict:
    out: dict = {}
    if getattr(args, "seed", None) is not None:
        out.setdefault("sim", {})["seed"] = args.seed
    if getattr(args, "shots", None) is not None:
        out.setdefault("sim", {})["shots"] = args.shots
    if getattr(args, "window", None) is not None:
        out.setdefault("analysis", {})["window"] = args.window
    return out


def _load(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def write_manifest(out: Path, args, cfg: RunConfig | None) -> Path:
    """Record how to rerun this invocation. Written before any result."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": args.command,
        "config_path": str(args.config) if getattr(args, "config", None) else None,
        "seed": cfg.sim.seed if cfg is not None else None,
        "output_dir": str(out),
        "version": tool_version(),
        "config_fingerprint": cfg.fingerprint if cfg is not None else None,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _dump(payload) -> str:
    return json.dumps(payload, indent=2, default=float) + "\n"


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    write_manifest(out, args, cfg)
    data = simulate_run(cfg.sim)
    data.to_csv(out / "dataset.csv")
    print(f"wrote {len(data)} records to {out / 'dataset.csv'}")
    return EXIT_OK


def _figures(result, out: Path) -> list[str]:
    paths = [plotting.plot_cumulative_variance(result.series.z_values, result.click, out / "cumulative_variance.png")]
    if result.fit is not None:
        paths.append(plotting.plot_noise_scaling(result.fit, out / "noise_scaling.png", result.report["sum_sq"]))
    return [str(p) for p in paths]


def cmd_analyze(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    write_manifest(out, args, cfg)
    data = read_dataset(args.dataset)
    a = cfg.analysis
    if len(data) <= a.window:
        raise ValueError(f"window M={a.window} needs more than M records, dataset has {len(data)}")
    result = run_pipeline(data, a.window, a.bootstrap_resamples, a.bootstrap_seed, a.scaling_bins)
    report = result.report
    report["figures"] = [] if args.no_figures else _figures(result, out)
    (out / "analysis.json").write_text(_dump(report), encoding="utf-8")
    if args.json:
        sys.stdout.write(_dump(report))
    else:
        nc, c = report["var_noclick"], report["var_click"]
        print(f"var(Z no click) = {nc['value']:.4f} +- {nc['err']:.4f}  (L={nc['L']})")
        print(f"var(Z click)    = {c['value']:.4f} +- {c['err']:.4f}  (L={c['L']})")
        print(f"sum(w^2)        = {report['sum_sq']:.4f}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    write_manifest(out, args, cfg)
    targets, result = reproduce(cfg, simulate=not args.skip_sim)
    (out / "reproduce.csv").write_text(to_csv(targets), encoding="utf-8")
    payload = {
        "targets": [t.as_dict() for t in targets],
        "all_pass": all(t.passed for t in targets),
        "config_fingerprint": cfg.fingerprint,
    }
    if result is not None:
        payload["analysis"] = result.report
        if not args.no_figures:
            figures = _figures(result, out)
            marginals = {
                f"n={n}": rotated_dicke_distribution(CollectiveSpinState(cfg.spin.n_atoms, n)) for n in (0, 1)
            }
            figures.append(str(plotting.plot_marginals(marginals, out / "dicke_marginals.png")))
            post = click_posterior(cfg.herald, cfg.herald_truncation["n_max"])
            figures.append(str(plotting.plot_posterior(post.probabilities, out / "click_posterior.png")))
            payload["figures"] = figures
    (out / "reproduce.json").write_text(_dump(payload), encoding="utf-8")
    if args.json:
        sys.stdout.write(_dump(payload))
    else:
        print(format_table(targets))
    return EXIT_OK if payload["all_pass"] else EXIT_TARGET


def _oracle_rows(args) -> list[tuple[str, float, float]]:
    if args.which == "posterior":
        params = HeraldParams.from_experiment(
            **{k: v for k, v in (("p0", args.p0), ("p2_ratio", args.p2_ratio), ("pd", args.pd)) if v is not None}
        )
        if args.pf is not None:
            params = HeraldParams(params.p0, params.p2, params.pd, args.pf)
        closed = click_posterior(params, args.n_max)
        brute = posterior_bruteforce(params, args.n_max, args.k_max)
        return [(f"p({n}|click)", float(closed[n]), float(brute[n])) for n in range(args.n_max + 1)]
    if args.which == "dicke":
        rows = []
        for n_atoms in args.n_atoms:
            exact = jz_variance(rotated_dicke_distribution(CollectiveSpinState(n_atoms, args.excitation)))
            rows.append((f"var(dN) N={n_atoms} n={args.excitation}", quarter_turn_variance(n_atoms, args.excitation), exact))
        return rows
    # thinned thermal: closed form vs explicit binomial convolution
    from scipy.stats import binom

    pd = 0.1792 if args.pd is None else args.pd
    k = np.arange(args.k_max + 1)
    source = np.array([thermal_pmf(args.p2, int(j)) for j in k])
    rows = []
    for n in range(args.n_max + 1):
        conv = float(np.sum(source * binom.pmf(n, k, pd)))
        rows.append((f"P({n} clicks)", thinned_thermal_click_pmf(args.p2, pd, n), conv))
    return rows


def cmd_oracle(args) -> int:
    rows = _oracle_rows(args)
    deviation = max(abs(a - b) for _, a, b in rows)
    if args.json:
        payload = {
            "which": args.which,
            "rows": [{"quantity": q, "closed_form": a, "oracle": b} for q, a, b in rows],
            "max_abs_deviation": deviation,
        }
        sys.stdout.write(_dump(payload))
    else:
        width = max(len(q) for q, _, _ in rows)
        print(f"{'quantity':<{width}}  {'closed form':>22}  {'oracle':>22}")
        for q, a, b in rows:
            print(f"{q:<{width}}  {a:>22.15g}  {b:>22.15g}")
        print(f"max abs deviation: {deviation:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinherald", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config merged over the bundled defaults")
    common.add_argument("--seed", type=int, help="simulation seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--json", action="store_true", help="print a machine-readable report")
    common.add_argument("--window", type=int, help="normalization window M (even)")
    common.add_argument("--shots", type=int, help="number of simulated shots")

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="run the analysis pipeline on a dataset CSV")
    p.add_argument("dataset", type=Path)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("reproduce", parents=[common], help="compare computed values with the published targets")
    p.add_argument("--skip-sim", action="store_true", help="closed-form targets only")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("oracle", parents=[common], help="closed form next to an independent oracle")
    p.add_argument("which", choices=["posterior", "dicke", "thinned"])
    p.add_argument("--p0", type=float)
    p.add_argument("--p2-ratio", type=float)
    p.add_argument("--pd", type=float)
    p.add_argument("--pf", type=float)
    p.add_argument("--p2", type=float, default=0.0042, help="unwanted-channel probability (thinned)")
    p.add_argument("--n-max", type=int, default=8)
    p.add_argument("--k-max", type=int, default=500)
    p.add_argument("--n-atoms", type=int, nargs="+", default=[10])
    p.add_argument("--excitation", type=int, default=1)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
