"""Experiment configuration: YAML schema, strict validation, round-tripping.

YAML is the one configuration format. Unknown keys are rejected everywhere
so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .data import PartitionSpec, TASKS
from .errors import ConfigError
from .latency import DeviceProfile, NetworkProfile, WorkloadProfile
from .model import SplitModelConfig
from .protocol import HyperParams
from .traffic import PROTOCOLS
from .zo import ZoConfig

MAX_SEED = (1 << 64) - 1


@dataclass(frozen=True)
class DataConfig:
    task: str = "classification_blobs"
    n: int = 1024
    dim: int = 8
    classes: int = 2
    separation: float = 3.0
    noise: float = 0.0
    out_dim: int = 1
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"data.task must be one of {TASKS}")
        if self.n < 2 or self.dim < 1:
            raise ConfigError("data.n and data.dim must be positive")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ConfigError("data.eval_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str
    model: SplitModelConfig
    hp: HyperParams
    partition: PartitionSpec
    data: DataConfig
    sample_budget: int | None = None
    root_seed: int = 0
    output_dir: str | None = None


def _take(section: dict, name: str, allowed: set) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in section {name!r}")
    return section


def _require(section: dict, key: str, where: str):
    if key not in section or section[key] is None:
        raise ConfigError(f"missing required field {key!r} in {where}")
    return section[key]


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate one experiment configuration document."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"parse error{where}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a mapping")
    _take(raw, "top level", {"protocol", "model", "hp", "partition", "data",
                             "sample_budget", "root_seed", "output_dir"})

    protocol = _require(raw, "protocol", "top level")
    if protocol not in PROTOCOLS:
        raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")

    msec = _take(_require(raw, "model", "top level"), "model",
                 {"layer_dims", "activation", "cut_index", "loss", "bias"})
    try:
        model_cfg = SplitModelConfig(
            layer_dims=tuple(_require(msec, "layer_dims", "model")),
            activation=msec.get("activation", "tanh"),
            cut_index=int(msec.get("cut_index", 1)),
            loss=msec.get("loss", "squared_error"),
            bias=bool(msec.get("bias", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc

    hsec = _take(_require(raw, "hp", "top level"), "hp",
                 {"eta", "T", "M", "K", "batch_size", "optimizer", "zo"})
    zsec = _take(hsec.get("zo") or {}, "hp.zo", {"P", "mu"})
    try:
        zo_cfg = ZoConfig(P=int(zsec.get("P", 5)), mu=float(zsec.get("mu", 1e-3)))
        hp = HyperParams(
            eta=float(_require(hsec, "eta", "hp")),
            T=int(hsec.get("T", 0)),
            M=int(_require(hsec, "M", "hp")),
            K=int(_require(hsec, "K", "hp")),
            batch_size=int(_require(hsec, "batch_size", "hp")),
            zo=zo_cfg,
            optimizer=hsec.get("optimizer", "sgd"),
        )
    except ValueError as exc:
        raise ConfigError(f"hp: {exc}") from exc

    psec = _take(raw.get("partition") or {}, "partition", {"mode", "alpha"})
    try:
        partition = PartitionSpec(mode=psec.get("mode", "iid"),
                                  alpha=float(psec.get("alpha", 1.0)), M=hp.M)
    except ValueError as exc:
        raise ConfigError(f"partition: {exc}") from exc

    dsec = _take(raw.get("data") or {}, "data",
                 {"task", "n", "dim", "classes", "separation", "noise",
                  "out_dim", "eval_fraction"})
    try:
        data_cfg = DataConfig(
            task=dsec.get("task", "classification_blobs"),
            n=int(dsec.get("n", 1024)),
            dim=int(dsec.get("dim", model_cfg.n_in)),
            classes=int(dsec.get("classes", 2)),
            separation=float(dsec.get("separation", 3.0)),
            noise=float(dsec.get("noise", 0.0)),
            out_dim=int(dsec.get("out_dim", model_cfg.n_out)),
            eval_fraction=float(dsec.get("eval_fraction", 0.2)),
        )
    except (ConfigError, ValueError) as exc:
        raise ConfigError(f"data: {exc}") from exc

    budget = raw.get("sample_budget")
    if budget is not None:
        budget = int(budget)
        if budget < 0:
            raise ConfigError("sample_budget must be non-negative")
    root_seed = int(raw.get("root_seed", 0))
    if not 0 <= root_seed <= MAX_SEED:
        raise ConfigError("root_seed must fit in 64 bits")

    cfg = ExperimentConfig(
        protocol=protocol, model=model_cfg, hp=hp, partition=partition,
        data=data_cfg, sample_budget=budget, root_seed=root_seed,
        output_dir=raw.get("output_dir"),
    )
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ExperimentConfig):
    if cfg.data.dim != cfg.model.n_in:
        raise ConfigError(
            f"data.dim ({cfg.data.dim}) must equal the model input width "
            f"({cfg.model.n_in})"
        )
    if cfg.data.task == "classification_blobs":
        if cfg.model.loss != "softmax_cross_entropy":
            raise ConfigError("classification_blobs requires loss softmax_cross_entropy")
        if cfg.data.classes != cfg.model.n_out:
            raise ConfigError(
                f"data.classes ({cfg.data.classes}) must equal the model output "
                f"width ({cfg.model.n_out})"
            )
    else:
        if cfg.model.loss != "squared_error":
            raise ConfigError("regression_quadratic requires loss squared_error")
        if cfg.data.out_dim != cfg.model.n_out:
            raise ConfigError("data.out_dim must equal the model output width")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {
        "protocol": cfg.protocol,
        "model": {
            "layer_dims": list(cfg.model.layer_dims),
            "activation": cfg.model.activation,
            "cut_index": cfg.model.cut_index,
            "loss": cfg.model.loss,
            "bias": cfg.model.bias,
        },
        "hp": {
            "eta": cfg.hp.eta,
            "T": cfg.hp.T,
            "M": cfg.hp.M,
            "K": cfg.hp.K,
            "batch_size": cfg.hp.batch_size,
            "optimizer": cfg.hp.optimizer,
            "zo": {"P": cfg.hp.zo.P, "mu": cfg.hp.zo.mu},
        },
        "partition": {"mode": cfg.partition.mode, "alpha": cfg.partition.alpha},
        "data": {
            "task": cfg.data.task,
            "n": cfg.data.n,
            "dim": cfg.data.dim,
            "classes": cfg.data.classes,
            "separation": cfg.data.separation,
            "noise": cfg.data.noise,
            "out_dim": cfg.data.out_dim,
            "eval_fraction": cfg.data.eval_fraction,
        },
        "root_seed": cfg.root_seed,
    }
    if cfg.sample_budget is not None:
        out["sample_budget"] = cfg.sample_budget
    if cfg.output_dir is not None:
        out["output_dir"] = cfg.output_dir
    return out


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# -----------------------------------------------------------------------------
# Latency profile documents
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyProfileConfig:
    network: NetworkProfile = field(default_factory=NetworkProfile)
    device: DeviceProfile = field(default_factory=DeviceProfile)
    workload: WorkloadProfile = field(default_factory=WorkloadProfile)
    layer_min: int = 2
    layer_max: int = 8
    noise_trials: int = 0
    noise_frac: float = 0.1
    noise_seed: int = 0


def parse_latency_profile(text: str) -> LatencyProfileConfig:
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"parse error{where}: {exc}") from exc
    _take(raw, "top level", {"network", "device", "workload", "sweep"})
    nsec = _take(raw.get("network") or {}, "network",
                 {"uplink_bps", "downlink_bps", "rtt_seconds"})
    dsec = _take(raw.get("device") or {}, "device",
                 {"client_flops_per_s", "server_flops_per_s", "flops_utilization"})
    wsec = _take(raw.get("workload") or {}, "workload",
                 {"batch", "seq_len", "hidden", "total_layers", "client_layers",
                  "bytes_per_activation"})
    ssec = _take(raw.get("sweep") or {}, "sweep",
                 {"layer_min", "layer_max", "noise_trials", "noise_frac", "noise_seed"})
    try:
        net = NetworkProfile(**{k: float(v) for k, v in nsec.items()})
        dev = DeviceProfile(**{k: float(v) for k, v in dsec.items()})
        work = WorkloadProfile(**{k: int(v) for k, v in wsec.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"latency profile: {exc}") from exc
    lo = int(ssec.get("layer_min", 2))
    hi = int(ssec.get("layer_max", 8))
    if not 1 <= lo <= hi < work.total_layers:
        raise ConfigError("sweep layer range must satisfy 1 <= min <= max < total_layers")
    return LatencyProfileConfig(
        network=net, device=dev, workload=work, layer_min=lo, layer_max=hi,
        noise_trials=int(ssec.get("noise_trials", 0)),
        noise_frac=float(ssec.get("noise_frac", 0.1)),
        noise_seed=int(ssec.get("noise_seed", 0)),
    )
