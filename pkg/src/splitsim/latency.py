"""Feasibility calculator for hiding client perturbation passes.

Models one split-transformer round: the client uploads a cut activation,
the server runs forward+backward and returns the activation gradient, and
the client's idle window (uplink + server compute + downlink) is measured
against the cost of one client forward pass. The number of perturbation
passes that fit in the window is the quantity of interest.

FLOPs model, fixed and documented: one transformer layer forward costs
24*B*S*H^2 + 4*B*S^2*H (dense blocks plus attention scores/values), the
server backward costs twice its forward, and sustained throughput is peak
FLOPS scaled by a utilization factor (default 0.7, a realistic fraction of
peak for transformer inference on accelerators).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import prng


@dataclass(frozen=True)
class NetworkProfile:
    """Link speeds in bits per second plus round-trip time in seconds."""

    uplink_bps: float = 30e6
    downlink_bps: float = 200e6
    rtt_seconds: float = 0.030

    def __post_init__(self):
        if min(self.uplink_bps, self.downlink_bps) <= 0 or self.rtt_seconds < 0:
            raise ValueError("network profile values must be positive")


@dataclass(frozen=True)
class DeviceProfile:
    """Peak FLOP/s of the two devices and the sustained-utilization fraction."""

    client_flops_per_s: float = 2.0e12
    server_flops_per_s: float = 312e12
    flops_utilization: float = 0.7

    def __post_init__(self):
        if min(self.client_flops_per_s, self.server_flops_per_s) <= 0:
            raise ValueError("device speeds must be positive")
        if not 0 < self.flops_utilization <= 1:
            raise ValueError("utilization must lie in (0, 1]")


@dataclass(frozen=True)
class WorkloadProfile:
    """Split-transformer round geometry; defaults follow a 1B-parameter model."""

    batch: int = 32
    seq_len: int = 256
    hidden: int = 2048
    total_layers: int = 18
    client_layers: int = 4
    bytes_per_activation: int = 2

    def __post_init__(self):
        if not 1 <= self.client_layers < self.total_layers:
            raise ValueError("need 1 <= client_layers < total_layers")
        if min(self.batch, self.seq_len, self.hidden, self.bytes_per_activation) < 1:
            raise ValueError("workload dimensions must be positive")

    def replace_layers(self, client_layers: int) -> "WorkloadProfile":
        return WorkloadProfile(self.batch, self.seq_len, self.hidden,
                               self.total_layers, client_layers,
                               self.bytes_per_activation)


def transformer_layer_flops(batch: int, seq_len: int, hidden: int) -> float:
    """Forward FLOPs of one transformer layer: dense blocks plus attention."""
    return 24.0 * batch * seq_len * hidden ** 2 + 4.0 * batch * seq_len ** 2 * hidden


def activation_payload_bytes(work: WorkloadProfile) -> int:
    return work.batch * work.seq_len * work.hidden * work.bytes_per_activation


@dataclass(frozen=True)
class RoundTimeline:
    t_client_fwd: float
    t_uplink: float
    t_server: float
    t_downlink: float
    t_perturb_total: float
    idle_window: float


def round_timeline(net: NetworkProfile, dev: DeviceProfile, work: WorkloadProfile,
                   perturbations: int = 0) -> RoundTimeline:
    """Phase times for one round and the client idle window.

    Half the RTT is attributed to each direction. The idle window covers
    activation uplink, server forward+backward, and feedback downlink; the
    client's own anchor forward sits outside it.
    """
    layer = transformer_layer_flops(work.batch, work.seq_len, work.hidden)
    client_speed = dev.client_flops_per_s * dev.flops_utilization
    server_speed = dev.server_flops_per_s * dev.flops_utilization
    t_fwd = work.client_layers * layer / client_speed
    payload_bits = activation_payload_bytes(work) * 8
    t_up = payload_bits / net.uplink_bps + net.rtt_seconds / 2
    t_down = payload_bits / net.downlink_bps + net.rtt_seconds / 2
    t_server = 3.0 * (work.total_layers - work.client_layers) * layer / server_speed
    idle = t_up + t_server + t_down
    return RoundTimeline(t_fwd, t_up, t_server, t_down, perturbations * t_fwd, idle)


def max_overlapped_perturbations(net: NetworkProfile, dev: DeviceProfile,
                                 work: WorkloadProfile) -> int:
    """How many perturbation passes fit inside the client idle window."""
    tl = round_timeline(net, dev, work)
    if not math.isfinite(tl.t_client_fwd) or tl.t_client_fwd <= 0:
        return 0
    return int(tl.idle_window // tl.t_client_fwd)


def noisy_pmax_stats(net: NetworkProfile, dev: DeviceProfile, work: WorkloadProfile,
                     noise_frac: float = 0.1, trials: int = 100, seed: int = 0):
    """(mean, min, max) of the overlap count under +-noise_frac speed jitter."""
    if trials < 1:
        raise ValueError("need at least one trial")
    values = []
    for t in range(trials):
        u = prng.uniform_stream(prng.derive_stream(seed, prng.STREAM_PROBE, t), 4)
        f = 1.0 + noise_frac * (2.0 * u - 1.0)
        jittered_net = NetworkProfile(net.uplink_bps * f[0], net.downlink_bps * f[1],
                                      net.rtt_seconds)
        jittered_dev = DeviceProfile(dev.client_flops_per_s * f[2],
                                     dev.server_flops_per_s * f[3],
                                     dev.flops_utilization)
        values.append(max_overlapped_perturbations(jittered_net, jittered_dev, work))
    return sum(values) / len(values), min(values), max(values)


@dataclass(frozen=True)
class SweepRow:
    client_layers: int
    t_client_fwd: float
    t_uplink: float
    t_server: float
    t_downlink: float
    idle_window: float
    p_max: int


def latency_sweep(net: NetworkProfile, dev: DeviceProfile, work: WorkloadProfile,
                  layer_range) -> list:
    """One row per client depth: phase times and the overlap count."""
    rows = []
    for lc in layer_range:
        w = work.replace_layers(lc)
        tl = round_timeline(net, dev, w)
        rows.append(SweepRow(lc, tl.t_client_fwd, tl.t_uplink, tl.t_server,
                             tl.t_downlink, tl.idle_window,
                             max_overlapped_perturbations(net, dev, w)))
    return rows


def format_sweep_csv(rows) -> str:
    lines = ["client_layers,t_client_fwd,t_uplink,t_server,t_downlink,idle_window,p_max"]
    for r in rows:
        lines.append(
            f"{r.client_layers},{r.t_client_fwd!r},{r.t_uplink!r},{r.t_server!r},"
            f"{r.t_downlink!r},{r.idle_window!r},{r.p_max}"
        )
    return "\n".join(lines) + "\n"
