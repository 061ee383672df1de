"""Command-line harness: dataset generation, bound verification, fitting, and
the scaling / reconstruction-bound experiments, with CSV + JSON + SVG outputs.

Exit codes: 0 success, 1 usage or config error, 2 bound violation,
3 numerical failure.  The SSVAE_ENUM_CAP environment variable overrides the
library enumeration cap.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import plots
from .bounds import run_bound_suites
from .estimation import (
    ExperimentConfig,
    FitConfig,
    OptimizationFailureError,
    SequenceBatch,
    corollary_bound_report,
    exact_risk,
    fit,
    scaling_experiment,
)
from .inference import ImpossibleObservationError
from .models import Dataset, FiniteSSM, sample_sequences
from .reporting import config_hash, write_csv, write_json, write_manifest
from .variational import BackwardVariational


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config(path: str | None) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _parse_model(d: dict) -> FiniteSSM:
    if not isinstance(d, dict):
        raise ConfigError("model spec must be an object")
    try:
        return FiniteSSM.from_dict(d)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad model spec: {exc}") from exc


def _parse_fit(d: dict | None, seed: int) -> FitConfig:
    d = d or {}
    return FitConfig(
        starts=int(d.get("starts", 8)),
        max_iter=int(d.get("max_iter", 800)),
        tol=float(d.get("tol", 1e-10)),
        gradient=str(d.get("gradient", "analytic")),
        fd_step=float(d.get("fd_step", 1e-6)),
        seed=seed,
        start_scale=float(d.get("start_scale", 1.0)),
    )


def _parse_experiment(cfg: dict, seed: int, threads: int) -> ExperimentConfig:
    model = _parse_model(cfg.get("model", {}))
    fam = cfg.get("family", {})
    n_grid = tuple(int(n) for n in cfg.get("n_grid", ()))
    T_grid = tuple(int(t) for t in cfg.get("T_grid", ()))
    if not n_grid:
        raise ConfigError("n_grid must be a nonempty list of sample sizes")
    if not T_grid:
        raise ConfigError("T_grid must be a nonempty list of horizons")
    if any(n < 1 for n in n_grid) or any(t < 0 for t in T_grid):
        raise ConfigError("n_grid entries must be >= 1 and T_grid entries >= 0")
    return ExperimentConfig(
        model=model,
        theta_radius=float(fam.get("theta_radius", 3.0)),
        n_grid=n_grid,
        T_grid=T_grid,
        replicates=int(cfg.get("replicates", 8)),
        seed=seed,
        gamma=float(cfg.get("gamma", 1.0)),
        context_mode=str(fam.get("context_mode", "full-prefix")),
        w=int(fam.get("w", 1)),
        phi_clip=float(fam.get("phi_clip", 8.0)),
        floor=float(fam.get("floor", 0.0)),
        fit=_parse_fit(cfg.get("fit"), seed),
        oracle_budget_factor=int(cfg.get("oracle_budget_factor", 10)),
        threads=threads,
    )


def _meta(cfg: dict, seed: int) -> dict:
    h = config_hash({**cfg, "seed": seed})
    return {
        "config_hash": h,
        "master_seed": seed,
        "stamp": f"config_hash={h} master_seed={seed}",
    }


def _outdir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-probe"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}") from exc
    return out


def cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    n = int(cfg.get("n", 0))
    T = int(cfg.get("T", -1))
    if n < 1 or T < 0:
        raise ConfigError("gen needs n >= 1 and T >= 0")
    model = _parse_model(cfg.get("model", {}))
    out = _outdir(args)
    meta = _meta(cfg, seed)
    dataset = sample_sequences(model, n, T, seed)
    payload = dataset.to_dict()
    art = [write_json(out / "dataset.json", payload, meta)]
    write_manifest(out, art, meta)
    print(f"wrote {art[0]}")
    return 0


def cmd_verify_bounds(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _outdir(args)
    meta = _meta(cfg, seed)
    report = run_bound_suites(
        n_instances=int(cfg.get("instances", 50)),
        seed=seed,
        K_range=tuple(cfg.get("K_range", (2, 4))),
        V_range=tuple(cfg.get("V_range", (2, 3))),
        T_range=tuple(cfg.get("T_range", (2, 5))),
        pairs_per_instance=int(cfg.get("pairs_per_instance", 6)),
        doeblin_trials=int(cfg.get("doeblin_trials", 20)),
        envelope_pairs=int(cfg.get("envelope_pairs", 20)),
    )
    payload = report.to_dict()
    if "model" in cfg:
        from .bounds import certify_mixing

        cert = certify_mixing(_parse_model(cfg["model"]))
        payload["verdicts"]["model-mixing-positivity"] = cert.verdict.to_dict()
        payload["model_certificate"] = cert.to_dict()
        if not cert.holds:
            payload["violated"] = payload["violated"] + ["model-mixing-positivity"]
    artifacts = [write_json(out / "bound_report.json", payload, meta)]
    slack_rows = [
        {"suite": name, "instance": i, "worst_slack": s}
        for name, samples in sorted(report.slack_samples.items())
        for i, s in enumerate(samples)
    ]
    artifacts.append(
        write_csv(out / "slack_samples.csv", ["suite", "instance", "worst_slack"], slack_rows, meta)
    )
    artifacts.append(
        plots.plot_slack_histograms(report.slack_samples, out / "slack_histograms.svg", meta["stamp"])
    )
    write_manifest(out, artifacts, meta)
    if payload["violated"]:
        print(f"violated suites: {', '.join(payload['violated'])}")
        return 2
    print(f"all {len(payload['verdicts'])} suites hold over {report.n_instances} instances")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _outdir(args)
    meta = _meta(cfg, seed)
    model = _parse_model(cfg.get("model", {}))
    T = int(cfg.get("T", 2))
    econf = _parse_experiment(
        {**cfg, "n_grid": [int(cfg.get("n", 256))], "T_grid": [T]}, seed, args.threads
    )
    fam, qfam = econf.families(T)
    if "dataset" in cfg:
        dataset = Dataset.load(cfg["dataset"])
    else:
        dataset = sample_sequences(model, int(cfg.get("n", 256)), T, seed)
    batch = SequenceBatch.from_dataset(dataset, model, qfam.structure)
    res = fit(batch, fam, qfam, econf.fit)
    model_hat = fam.realize(res.theta_hat)
    q_hat = BackwardVariational(qfam.structure, res.phi_hat)
    risk = exact_risk(model_hat, q_hat, model, T)
    payload = {
        "theta_hat": res.theta_hat.tolist(),
        "phi_hat": res.phi_hat.tolist(),
        "final_loss": res.final_loss,
        "converged": res.converged,
        "restarts": res.restarts,
        "start_losses": res.start_losses,
        "risk": risk.risk,
        "kl_data": risk.kl_data,
        "kl_post": risk.kl_post,
    }
    artifacts = [write_json(out / "fit_result.json", payload, meta)]
    trace_rows = [{"iteration": i, "loss": v} for i, v in enumerate(res.trace)]
    artifacts.append(write_csv(out / "fit_trace.csv", ["iteration", "loss"], trace_rows, meta))
    artifacts.append(plots.plot_fit_trace(res.trace, out / "fit_trace.svg", meta["stamp"]))
    write_manifest(out, artifacts, meta)
    print(f"fit loss {res.final_loss:.6g}, exact risk {risk.risk:.6g}")
    return 0


def _write_scaling_outputs(report, config: ExperimentConfig, out: Path, meta: dict) -> list[Path]:
    # timings are diagnostics: wall clocks vary run to run, so they stay out of
    # the manifest and the byte-identical reproducibility contract
    write_csv(
        out / "timings.csv",
        ["n", "T", "replicate", "wall_ms"],
        [
            {"n": r.n, "T": r.T, "replicate": r.replicate, "wall_ms": round(r.wall_ms, 3)}
            for r in report.rows
        ],
        meta,
    )
    artifacts = [
        write_csv(
            out / "results.csv",
            ["n", "T", "replicate", "risk", "excess", "kl_data", "kl_post"],
            [r.row() for r in report.rows],
            meta,
        ),
        write_json(
            out / "summary.json",
            {
                "oracle_risk": {str(k): v for k, v in report.oracle.items()},
                "slopes": {str(k): v for k, v in report.slopes.items()},
                "slope_cis": {str(k): list(v) for k, v in report.slope_cis.items()},
                "t_growth_exponent": report.t_growth_exponent,
                "d_star": {str(k): v for k, v in report.d_star.items()},
                "d0": {str(k): v for k, v in report.d0.items()},
                "failures": report.failures,
                "n_grid": list(config.n_grid),
                "T_grid": list(config.T_grid),
                "replicates": config.replicates,
            },
            meta,
        ),
        plots.plot_excess_vs_n(
            report.rows, config.n_grid, config.T_grid, out / "excess_vs_n.svg", meta["stamp"]
        ),
    ]
    if len(config.T_grid) >= 2:
        artifacts.append(
            plots.plot_excess_vs_T(
                report.rows, config.n_grid, config.T_grid, out / "excess_vs_T.svg", meta["stamp"]
            )
        )
    return artifacts


def cmd_scaling(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _outdir(args)
    meta = _meta(cfg, seed)
    config = _parse_experiment(cfg, seed, args.threads)
    report = scaling_experiment(config)
    artifacts = _write_scaling_outputs(report, config, out, meta)
    write_manifest(out, artifacts, meta)
    print(f"slopes: { {T: round(s, 3) for T, s in report.slopes.items()} }")
    return 0


def cmd_corollary(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _outdir(args)
    meta = _meta(cfg, seed)
    config = _parse_experiment(cfg, seed, args.threads)
    restricted = cfg.get("restricted", {"context_mode": "window", "w": 0})
    report = corollary_bound_report(
        config,
        restricted_mode=str(restricted.get("context_mode", "window")),
        restricted_w=int(restricted.get("w", 0)),
    )
    artifacts = [
        write_csv(
            out / "corollary.csv",
            ["family", "n", "T", "replicate", "lhs", "kl_data", "kl_post", "approx_term", "residual"],
            report.rows,
            meta,
        ),
        write_json(
            out / "summary.json",
            {
                "epsilon_hat": report.epsilon_hat,
                "epsilon_lower_ci": report.epsilon_lower_ci,
                "T": report.T,
                "gamma": report.gamma,
                "gamma_sweep": {str(k): v for k, v in report.gamma_sweep.items()},
                "oracle_restricted": report.oracle_restricted,
                "oracle_realizable": report.oracle_realizable,
                "approx_term": (report.T + 1) * report.epsilon_hat,
                "residual_decreasing": {
                    fam: report.residual_decreasing(fam)
                    for fam in ("restricted", "realizable")
                },
            },
            meta,
        ),
        plots.plot_corollary(
            report.rows,
            config.n_grid,
            (report.T + 1) * report.epsilon_hat,
            out / "corollary_lhs_vs_n.svg",
            meta["stamp"],
        ),
    ]
    write_manifest(out, artifacts, meta)
    print(
        f"eps-hat {report.epsilon_hat:.4g}; restricted floor "
        f"{report.median_lhs('restricted', max(config.n_grid)):.4g}, realizable "
        f"{report.median_lhs('realizable', max(config.n_grid)):.4g}"
    )
    return 0


def _read_csv(path: Path) -> list[dict]:
    lines = [l for l in path.read_text().splitlines() if l and not l.startswith("#")]
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        row = {}
        for k, v in zip(header, line.split(",")):
            try:
                row[k] = int(v)
            except ValueError:
                try:
                    row[k] = float(v)
                except ValueError:
                    row[k] = v
        rows.append(row)
    return rows


def cmd_report(args) -> int:
    """Re-render figures and the manifest from existing result tables."""
    out = _outdir(args)
    summary_path = out / "summary.json"
    if not summary_path.exists():
        raise ConfigError(f"no summary.json in {out}")
    summary = json.loads(summary_path.read_text())
    meta = {
        "config_hash": summary["config_hash"],
        "master_seed": summary["master_seed"],
        "stamp": f"config_hash={summary['config_hash']} master_seed={summary['master_seed']}",
    }
    artifacts = [summary_path]
    results = out / "results.csv"
    corollary = out / "corollary.csv"
    if results.exists():
        from .estimation import CellResult

        rows = [
            CellResult(
                n=r["n"], T=r["T"], replicate=r["replicate"], risk=r["risk"], excess=r["excess"],
                kl_data=r["kl_data"], kl_post=r["kl_post"], final_loss=float("nan"),
                converged=True, wall_ms=0.0,
            )
            for r in _read_csv(results)
        ]
        n_grid = sorted({r.n for r in rows})
        T_grid = sorted({r.T for r in rows})
        artifacts.append(results)
        artifacts.append(
            plots.plot_excess_vs_n(rows, n_grid, T_grid, out / "excess_vs_n.svg", meta["stamp"])
        )
        if len(T_grid) >= 2:
            artifacts.append(
                plots.plot_excess_vs_T(rows, n_grid, T_grid, out / "excess_vs_T.svg", meta["stamp"])
            )
    elif corollary.exists():
        rows = _read_csv(corollary)
        n_grid = sorted({r["n"] for r in rows})
        eps_term = (summary["T"] + 1) * summary["epsilon_hat"]
        artifacts.append(corollary)
        artifacts.append(
            plots.plot_corollary(rows, n_grid, eps_term, out / "corollary_lhs_vs_n.svg", meta["stamp"])
        )
    else:
        raise ConfigError(f"no results.csv or corollary.csv in {out}")
    write_manifest(out, artifacts, meta)
    print(f"re-rendered figures in {out}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "verify-bounds": cmd_verify_bounds,
    "fit": cmd_fit,
    "scaling": cmd_scaling,
    "corollary": cmd_corollary,
    "report": cmd_report,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="ssvae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="parallel workers")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OptimizationFailureError, ImpossibleObservationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
