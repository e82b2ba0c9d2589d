"""Experiment execution: wiring configs into simulations and emitting files.

Outputs per run: metrics.jsonl (one self-describing JSON record per line,
header first), traffic.csv (the breakdown table), checksum.txt (SHA-256 of
the final parameter vectors). Every emitted byte is a pure function of the
configuration and root seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model, prng, protocol
from .config import DataConfig, ExperimentConfig, config_to_dict
from .data import Dataset, PartitionSpec, make_classification_blobs, make_regression_quadratic, partition_dataset
from .traffic import TrafficLedger, breakdown_report, format_breakdown_csv

METRICS_FILE = "metrics.jsonl"
TRAFFIC_FILE = "traffic.csv"
CHECKSUM_FILE = "checksum.txt"


@dataclass
class MetricsRecord:
    round: int
    train_loss: float
    eval_loss: float
    eval_accuracy: float | None
    grad_norm: float
    samples_processed: int
    traffic: dict


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list
    sim: protocol.Simulation

    @property
    def final_theta_c(self) -> np.ndarray:
        return self.sim.server.theta_c_global

    @property
    def final_theta_s(self) -> np.ndarray:
        return self.sim.server.theta_s


def _build_dataset(data_cfg: DataConfig, seed: int) -> Dataset:
    if data_cfg.task == "classification_blobs":
        return make_classification_blobs(data_cfg.n, data_cfg.dim, data_cfg.classes,
                                         data_cfg.separation, seed)
    return make_regression_quadratic(data_cfg.n, data_cfg.dim, data_cfg.out_dim,
                                     seed, data_cfg.noise)


def build_simulation(cfg: ExperimentConfig) -> protocol.Simulation:
    """Deterministically construct dataset, shards, and initial states."""
    root = cfg.root_seed
    full = _build_dataset(cfg.data, prng.derive_stream(root, prng.STREAM_DATA))
    n_eval = int(len(full) * cfg.data.eval_fraction)
    n_train = len(full) - n_eval
    train = Dataset(full.inputs[:n_train], full.labels[:n_train], full.task)
    eval_batch = None
    if n_eval > 0:
        eval_batch = model.Batch(full.inputs[n_train:], full.labels[n_train:])

    spec = PartitionSpec(cfg.partition.mode, cfg.partition.alpha, cfg.hp.M,
                         prng.derive_stream(root, prng.STREAM_PARTITION))
    shards = partition_dataset(train, spec)

    theta = model.init_params(cfg.model, root)
    theta_c, theta_s = theta[: cfg.model.d_c], theta[cfg.model.d_c:]
    server = protocol.ServerState(theta_s=theta_s.copy(), theta_c_global=theta_c.copy())
    clients = {
        cid: protocol.ClientState(client_id=cid, theta_c=theta_c.copy(), shard=shards[cid - 1])
        for cid in range(1, cfg.hp.M + 1)
    }
    return protocol.Simulation(
        protocol=cfg.protocol, model_cfg=cfg.model, hp=cfg.hp, dataset=train,
        eval_batch=eval_batch, server=server, clients=clients,
        ledger=TrafficLedger(), root_seed=root,
    )


def _evaluate(sim: protocol.Simulation):
    batch = sim.eval_batch
    if batch is None:
        batch = model.Batch(sim.dataset.inputs, sim.dataset.labels)
    theta = np.concatenate([sim.server.theta_c_global, sim.server.theta_s])
    return model.evaluate_model(theta, batch, sim.model_cfg)


def run_experiment(cfg: ExperimentConfig,
                   perturb_fn=prng.gaussian_vector) -> RunResult:
    """Run one configured experiment and return the full metrics log."""
    sim = build_simulation(cfg)
    records = []
    samples = 0
    for _ in range(protocol.planned_rounds(cfg.hp, cfg.sample_budget)):
        rm = protocol.run_round(sim, perturb_fn)
        sim.ledger.close_round()
        samples += rm.samples
        eval_loss, eval_acc = _evaluate(sim)
        records.append(MetricsRecord(
            round=rm.round, train_loss=rm.train_loss, eval_loss=eval_loss,
            eval_accuracy=eval_acc, grad_norm=rm.grad_norm,
            samples_processed=samples, traffic=sim.ledger.snapshot(),
        ))
    return RunResult(config=cfg, records=records, sim=sim)


# -----------------------------------------------------------------------------
# File emission
# -----------------------------------------------------------------------------

def _config_digest(cfg: ExperimentConfig) -> str:
    semantic = config_to_dict(cfg)
    semantic.pop("output_dir", None)  # where files land does not change the run
    blob = json.dumps(semantic, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def metrics_lines(result: RunResult) -> list:
    header = {
        "record": "header",
        "protocol": result.config.protocol,
        "root_seed": result.config.root_seed,
        "config_sha256": _config_digest(result.config),
        "fields": ["round", "train_loss", "eval_loss", "eval_accuracy",
                   "grad_norm", "samples_processed", "traffic"],
    }
    lines = [json.dumps(header)]
    for r in result.records:
        lines.append(json.dumps({
            "record": "round",
            "round": r.round,
            "train_loss": r.train_loss,
            "eval_loss": r.eval_loss,
            "eval_accuracy": r.eval_accuracy,
            "grad_norm": r.grad_norm,
            "samples_processed": r.samples_processed,
            "traffic": r.traffic,
        }))
    return lines


def checksum_lines(result: RunResult) -> list:
    theta_c = result.final_theta_c.tobytes()
    theta_s = result.final_theta_s.tobytes()
    return [
        f"theta_c_sha256={hashlib.sha256(theta_c).hexdigest()}",
        f"theta_s_sha256={hashlib.sha256(theta_s).hexdigest()}",
        f"combined_sha256={hashlib.sha256(theta_c + theta_s).hexdigest()}",
    ]


def write_outputs(result: RunResult, out_dir) -> dict:
    """Write metrics, traffic breakdown, and parameter checksums; return paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / METRICS_FILE,
        "traffic": out / TRAFFIC_FILE,
        "checksum": out / CHECKSUM_FILE,
    }
    paths["metrics"].write_text("\n".join(metrics_lines(result)) + "\n")
    paths["traffic"].write_text(format_breakdown_csv(breakdown_report(result.sim.ledger)))
    paths["checksum"].write_text("\n".join(checksum_lines(result)) + "\n")
    return paths
