"""Command-line entry point.

Subcommands: run, sweep-latency, diagnose-estimator, report-traffic.
Exit codes: 0 success, 1 usage/configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import latency, prng, runner, zo
from .config import (
    ExperimentConfig,
    LatencyProfileConfig,
    parse_config,
    parse_latency_profile,
)
from .errors import ConfigError
from .traffic import MessageKind, closed_form_traffic, PROTOCOLS

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage by default; the CLI contract wants 1
    def error(self, message):
        raise _UsageError(message)


def _load_config(path: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise _UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise _UsageError(f"invalid config {path}: {exc}") from exc


def _load_profile(path: str | None) -> LatencyProfileConfig:
    if path is None:
        return LatencyProfileConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise _UsageError(f"cannot read profile {path}: {exc}") from exc
    try:
        return parse_latency_profile(text)
    except ConfigError as exc:
        raise _UsageError(f"invalid profile {path}: {exc}") from exc


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    from dataclasses import replace
    if args.seed is not None:
        if not 0 <= args.seed <= (1 << 64) - 1:
            raise _UsageError("--seed must fit in 64 bits")
        cfg = replace(cfg, root_seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    if cfg.output_dir is None:
        cfg = replace(cfg, output_dir="out")
    return cfg


def _cmd_run(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    result = runner.run_experiment(cfg)
    paths = runner.write_outputs(result, cfg.output_dir)
    if result.records:
        last = result.records[-1]
        print(f"{cfg.protocol}: {len(result.records)} rounds, "
              f"final eval loss {last.eval_loss:.6f}, "
              f"samples {last.samples_processed}")
    else:
        print(f"{cfg.protocol}: 0 rounds (empty budget)")
    for name, p in paths.items():
        print(f"wrote {name}: {p}")
    return 0


def _cmd_sweep_latency(args) -> int:
    prof = _load_profile(args.config)
    rows = latency.latency_sweep(
        prof.network, prof.device, prof.workload,
        range(prof.layer_min, prof.layer_max + 1),
    )
    text = latency.format_sweep_csv(rows)
    if prof.noise_trials > 0:
        extra = ["client_layers,p_max_mean,p_max_min,p_max_max"]
        for lc in range(prof.layer_min, prof.layer_max + 1):
            mean, lo, hi = latency.noisy_pmax_stats(
                prof.network, prof.device, prof.workload.replace_layers(lc),
                prof.noise_frac, prof.noise_trials, prof.noise_seed,
            )
            extra.append(f"{lc},{mean!r},{lo},{hi}")
        text += "\n".join(extra) + "\n"
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "latency_sweep.csv"
    path.write_text(text)
    print(f"wrote sweep: {path}")
    for row in rows:
        print(f"client_layers={row.client_layers} p_max={row.p_max}")
    return 0


def _cmd_diagnose_estimator(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    sim = runner.build_simulation(cfg)
    from .protocol import draw_batch
    batch = draw_batch(sim.dataset, sim.clients[1].shard, cfg.hp.batch_size,
                       prng.derive_stream(cfg.root_seed, prng.STREAM_BATCH, 0, 1))
    theta = np.concatenate([sim.server.theta_c_global, sim.server.theta_s])
    diag = zo.estimator_diagnostics(cfg.model, theta, batch, cfg.hp.zo,
                                    n_trials=args.trials, seed=cfg.root_seed)
    gamma = zo.measure_regularity_bound(theta, batch, cfg.model, seed=cfg.root_seed)
    bounds = zo.theory_bounds(cfg.model.d_c, cfg.hp.zo.P, cfg.hp.zo.mu, gamma)
    report = {
        "d_c": cfg.model.d_c,
        "P": cfg.hp.zo.P,
        "mu": cfg.hp.zo.mu,
        "n_trials": diag.n_trials,
        "gamma_measured": gamma,
        "empirical_bias_sq": diag.empirical_bias_sq,
        "empirical_second_moment": diag.empirical_second_moment,
        "true_g_c_norm_sq": diag.true_g_c_norm_sq,
        "c1": bounds.c1,
        "sigma_zo_sq": bounds.sigma_zo_sq,
        "bias_bound_sq": bounds.bias_bound_sq,
        "second_moment_bound": bounds.c1 * diag.true_g_c_norm_sq + bounds.sigma_zo_sq,
    }
    out = Path(cfg.output_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "estimator_report.json"
    path.write_text(json.dumps(report, indent=2) + "\n")
    ok = report["empirical_second_moment"] <= report["second_moment_bound"]
    print(f"bias_sq={report['empirical_bias_sq']:.3e} "
          f"bound={report['bias_bound_sq']:.3e}")
    print(f"second_moment={report['empirical_second_moment']:.3e} "
          f"bound={report['second_moment_bound']:.3e} "
          f"({'within' if ok else 'EXCEEDS'} bound)")
    print(f"wrote report: {path}")
    return 0


def _cmd_report_traffic(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    protocols = PROTOCOLS if args.all_protocols else (cfg.protocol,)
    lines = ["protocol,kind,direction,bytes_per_round"]
    for proto in protocols:
        per_round = closed_form_traffic(cfg.hp, cfg.model, proto)
        for kind in MessageKind:
            lines.append(f"{proto},{kind.value},{kind.direction},{per_round[kind]}")
    text = "\n".join(lines) + "\n"
    out = Path(cfg.output_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "traffic_closed_form.csv"
    path.write_text(text)
    print(text, end="")
    print(f"wrote table: {path}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="splitsim",
                     description="Deterministic split federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured experiment")
    p_run.add_argument("--config", required=True, help="experiment YAML path")
    p_run.add_argument("--seed", type=int, default=None, help="override root seed")
    p_run.add_argument("--out", default=None, help="override output directory")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep-latency",
                             help="sweep client depth in the latency model")
    p_sweep.add_argument("--config", default=None, help="latency profile YAML path")
    p_sweep.add_argument("--out", default=None, help="output directory")
    p_sweep.set_defaults(func=_cmd_sweep_latency)

    p_diag = sub.add_parser("diagnose-estimator",
                            help="Monte Carlo estimator diagnostics vs closed-form bounds")
    p_diag.add_argument("--config", required=True, help="experiment YAML path")
    p_diag.add_argument("--trials", type=int, default=20000)
    p_diag.add_argument("--seed", type=int, default=None)
    p_diag.add_argument("--out", default=None)
    p_diag.set_defaults(func=_cmd_diagnose_estimator)

    p_traffic = sub.add_parser("report-traffic",
                               help="closed-form per-round traffic for a config")
    p_traffic.add_argument("--config", required=True, help="experiment YAML path")
    p_traffic.add_argument("--all-protocols", action="store_true",
                           help="tabulate every protocol, not just the configured one")
    p_traffic.add_argument("--seed", type=int, default=None)
    p_traffic.add_argument("--out", default=None)
    p_traffic.set_defaults(func=_cmd_report_traffic)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
