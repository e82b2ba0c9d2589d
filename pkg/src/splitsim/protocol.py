"""Round orchestration for the three training protocols.

The hybrid protocol runs four phases per round: synchronized clients upload
cut activations, the server backpropagates and returns per-client activation
feedback, clients project P seeded perturbations into scalars, and the
server broadcasts the aggregated scalars from which every client (and a
canonical server-held copy) reconstructs the identical update.

Stragglers never download parameters: they replay missed rounds from the
stored (seeds, scalars, learning rate) history, applying the exact same
update code path as live rounds, which is what makes catch-up bit-exact.

All cross-client reductions consume inputs in ascending client id with
left-to-right accumulation, so results do not depend on completion order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model, prng
from .data import Dataset
from .errors import NumericalError, ProtocolViolationError, StalenessError
from .prng import SeedSpec, derive_seed, derive_stream, gaussian_vector, ordered_mean, ordered_mean_scalar
from .traffic import FLOAT_BYTES, SEED_BYTES, MessageKind, TrafficLedger, label_payload_bytes
from .zo import ZoConfig, reconstruct_gradient, zo_scalars

OPTIMIZERS = ("sgd", "adam")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class HyperParams:
    eta: float
    T: int
    M: int
    K: int
    batch_size: int
    zo: ZoConfig = field(default_factory=ZoConfig)
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 1 <= self.K <= self.M:
            raise ValueError("need 1 <= K <= M")
        if self.T < 0 or self.batch_size < 1:
            raise ValueError("T must be >= 0 and batch_size >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def _opt_step(optimizer: str, state, theta: np.ndarray, grad: np.ndarray, eta: float):
    """One optimizer transition; returns (new_theta, new_state)."""
    if optimizer == "sgd":
        return theta - np.float64(eta) * grad, state
    if state is None:
        state = AdamState(np.zeros_like(theta), np.zeros_like(theta))
    state.step += 1
    state.m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grad
    state.v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = state.m / (1.0 - ADAM_BETA1 ** state.step)
    v_hat = state.v / (1.0 - ADAM_BETA2 ** state.step)
    return theta - np.float64(eta) * m_hat / (np.sqrt(v_hat) + ADAM_EPS), state


@dataclass
class RoundRecord:
    """Broadcast history for one round; the unit catch-up replay consumes."""

    round: int
    seeds: tuple
    v_bar: tuple
    eta_used: float


@dataclass
class ClientState:
    client_id: int
    theta_c: np.ndarray
    shard: np.ndarray
    t_sync: int = 0
    opt_state: AdamState | None = None


@dataclass
class ServerState:
    theta_s: np.ndarray
    theta_c_global: np.ndarray
    round: int = 0
    history: dict = field(default_factory=dict)
    opt_state_s: AdamState | None = None
    opt_state_c: AdamState | None = None


@dataclass
class RoundMetrics:
    round: int
    protocol: str
    train_loss: float
    grad_norm: float
    samples: int


@dataclass
class Simulation:
    """Everything one experiment needs, wired up and ready to step."""

    protocol: str
    model_cfg: model.SplitModelConfig
    hp: HyperParams
    dataset: Dataset
    eval_batch: model.Batch | None
    server: ServerState
    clients: dict
    ledger: TrafficLedger
    root_seed: int


# -----------------------------------------------------------------------------
# Sampling and batching
# -----------------------------------------------------------------------------

def sample_clients(m: int, k: int, seed: int) -> list:
    """K distinct client ids from 1..M, uniform without replacement, sorted."""
    if k > m:
        raise ValueError("cannot sample more clients than exist")
    ids = list(range(1, m + 1))
    u = prng.uniform_stream(seed, k)
    for i in range(k):
        j = i + int(u[i] * (m - i))
        ids[i], ids[j] = ids[j], ids[i]
    return sorted(ids[:k])


def draw_batch(dataset: Dataset, shard: np.ndarray, batch_size: int, seed: int) -> model.Batch:
    """Deterministic batch from a client shard; without replacement when possible."""
    n = len(shard)
    if n == 0:
        raise ProtocolViolationError("sampled client has an empty data shard")
    if n >= batch_size:
        pool = shard.tolist()
        u = prng.uniform_stream(seed, batch_size)
        picked = []
        for i in range(batch_size):
            j = i + int(u[i] * (n - i))
            pool[i], pool[j] = pool[j], pool[i]
            picked.append(pool[i])
        idx = np.asarray(picked, dtype=np.int64)
    else:
        u = prng.uniform_stream(seed, batch_size)
        idx = shard[(u * n).astype(np.int64)]
    return model.Batch(dataset.inputs[idx], dataset.labels[idx])


# -----------------------------------------------------------------------------
# Client update and catch-up replay
# -----------------------------------------------------------------------------

def _apply_round_update(theta_c, opt_state, rec: RoundRecord, hp: HyperParams,
                        d_c: int, perturb_fn):
    """The single code path through which any round's client update is applied."""
    g_hat = reconstruct_gradient(rec.v_bar, rec.seeds, hp.zo, d_c, perturb_fn)
    theta_c, opt_state = _opt_step(hp.optimizer, opt_state, theta_c, g_hat, rec.eta_used)
    return theta_c, opt_state, g_hat


def client_sync(client: ClientState, history: dict, hp: HyperParams, d_c: int,
                target_round: int, perturb_fn=gaussian_vector) -> ClientState:
    """Sequential catch-up: replay every missed round from stored history.

    Applies the identical update transition (including optimizer state) a
    live client would have applied, in round order. No parameters move over
    the wire; the caller accounts the (seed, scalar) tuples it re-serves.
    """
    if client.t_sync > target_round:
        raise ProtocolViolationError(
            f"client {client.client_id} is ahead of round {target_round}"
        )
    for tau in range(client.t_sync, target_round):
        rec = history.get(tau)
        if rec is None:
            raise StalenessError(
                f"round {tau} missing from history; client {client.client_id} "
                f"cannot catch up"
            )
        client.theta_c, client.opt_state, _ = _apply_round_update(
            client.theta_c, client.opt_state, rec, hp, d_c, perturb_fn
        )
        client.t_sync = tau + 1
    return client


# -----------------------------------------------------------------------------
# Protocol rounds
# -----------------------------------------------------------------------------

def _client_batches(sim: Simulation, selected, t: int):
    batches = {}
    for cid in selected:
        seed = derive_stream(sim.root_seed, prng.STREAM_BATCH, t, cid)
        batches[cid] = draw_batch(sim.dataset, sim.clients[cid].shard,
                                  sim.hp.batch_size, seed)
    return batches


def run_round_hosfl(sim: Simulation, perturb_fn=gaussian_vector) -> RoundMetrics:
    """One hybrid round: server first-order, clients seeded zeroth-order."""
    hp, cfg, server, ledger = sim.hp, sim.model_cfg, sim.server, sim.ledger
    t = server.round
    selected = sample_clients(hp.M, hp.K, derive_stream(sim.root_seed, prng.STREAM_SAMPLING, t))
    seeds = tuple(derive_seed(SeedSpec(sim.root_seed, t, p)) for p in range(1, hp.zo.P + 1))
    ledger.record(MessageKind.SEED_DOWN, hp.zo.P * SEED_BYTES, "server", "clients:*")

    # Phase 1: catch-up, then forward and upload
    batches = _client_batches(sim, selected, t)
    activations = {}
    for cid in selected:
        client = client_sync(sim.clients[cid], server.history, hp, cfg.d_c, t, perturb_fn)
        if client.t_sync != t:
            raise ProtocolViolationError(f"client {cid} entered round {t} unsynchronized")
        z = model.client_forward(client.theta_c, batches[cid], cfg)
        activations[cid] = z
        ledger.record(MessageKind.ACTIVATION_UP, z.size * FLOAT_BYTES,
                      f"client:{cid}", "server")
        ledger.record(MessageKind.LABEL_UP, label_payload_bytes(hp.batch_size, cfg),
                      f"client:{cid}", "server")

    # Phase 2: server backward, parameter update, feedback downlink
    losses, lams, server_grads = {}, {}, []
    for cid in selected:
        loss, g_s, lam = model.server_forward_backward(
            server.theta_s, activations[cid], batches[cid].labels, cfg
        )
        losses[cid], lams[cid] = loss, lam
        server_grads.append(g_s)
        ledger.record(MessageKind.GRAD_DOWN, lam.size * FLOAT_BYTES,
                      "server", f"client:{cid}")
    server.theta_s, server.opt_state_s = _opt_step(
        hp.optimizer, server.opt_state_s, server.theta_s,
        ordered_mean(server_grads), hp.eta,
    )

    # Phase 3: seeded perturbation projections
    projections = {}
    for cid in selected:
        proj = zo_scalars(sim.clients[cid].theta_c, lams[cid], activations[cid],
                          batches[cid], seeds, hp.zo, cfg, perturb_fn,
                          round=t, client_id=cid)
        projections[cid] = proj.values
        ledger.record(MessageKind.SCALAR_UP, hp.zo.P * FLOAT_BYTES,
                      f"client:{cid}", "server")

    # Phase 4: aggregate, broadcast, and apply the shared update
    v_bar = tuple(
        ordered_mean_scalar(projections[cid][p] for cid in selected)
        for p in range(hp.zo.P)
    )
    if not all(np.isfinite(v_bar)):
        raise NumericalError(f"round {t} aborted: non-finite aggregated scalar")
    ledger.record(MessageKind.SCALAR_DOWN, hp.zo.P * FLOAT_BYTES, "server", "clients:*")
    rec = RoundRecord(t, seeds, v_bar, hp.eta)
    server.history[t] = rec
    for cid in selected:
        client = sim.clients[cid]
        client.theta_c, client.opt_state, _ = _apply_round_update(
            client.theta_c, client.opt_state, rec, hp, cfg.d_c, perturb_fn
        )
        client.t_sync = t + 1
    server.theta_c_global, server.opt_state_c, g_hat = _apply_round_update(
        server.theta_c_global, server.opt_state_c, rec, hp, cfg.d_c, perturb_fn
    )
    server.round = t + 1
    return RoundMetrics(t, "hosfl", ordered_mean_scalar(losses.values()),
                        float(np.linalg.norm(g_hat)), hp.K * hp.batch_size)


def run_round_sfl(sim: Simulation) -> RoundMetrics:
    """First-order baseline: client backprop via feedback, then model averaging."""
    hp, cfg, server, ledger = sim.hp, sim.model_cfg, sim.server, sim.ledger
    t = server.round
    selected = sample_clients(hp.M, hp.K, derive_stream(sim.root_seed, prng.STREAM_SAMPLING, t))
    batches = _client_batches(sim, selected, t)

    activations = {}
    for cid in selected:
        # each sampled client pulls the current global client model
        sim.clients[cid].theta_c = server.theta_c_global.copy()
        ledger.record(MessageKind.MODEL_DOWN, cfg.d_c * FLOAT_BYTES,
                      "server", f"client:{cid}")
        z = model.client_forward(sim.clients[cid].theta_c, batches[cid], cfg)
        activations[cid] = z
        ledger.record(MessageKind.ACTIVATION_UP, z.size * FLOAT_BYTES,
                      f"client:{cid}", "server")
        ledger.record(MessageKind.LABEL_UP, label_payload_bytes(hp.batch_size, cfg),
                      f"client:{cid}", "server")

    losses, lams, server_grads = {}, {}, []
    for cid in selected:
        loss, g_s, lam = model.server_forward_backward(
            server.theta_s, activations[cid], batches[cid].labels, cfg
        )
        losses[cid], lams[cid] = loss, lam
        server_grads.append(g_s)
        ledger.record(MessageKind.GRAD_DOWN, lam.size * FLOAT_BYTES,
                      "server", f"client:{cid}")
    server.theta_s, server.opt_state_s = _opt_step(
        hp.optimizer, server.opt_state_s, server.theta_s,
        ordered_mean(server_grads), hp.eta,
    )

    # exact client gradients, one local step, full-model upload, average
    client_grads = []
    updated = []
    for cid in selected:
        client = sim.clients[cid]
        g_c = model.client_backward_from_lambda(client.theta_c, batches[cid], lams[cid], cfg)
        client_grads.append(g_c)
        client.theta_c = client.theta_c - np.float64(hp.eta) * g_c
        client.t_sync = t + 1
        updated.append(client.theta_c)
        ledger.record(MessageKind.MODEL_UP, cfg.d_c * FLOAT_BYTES,
                      f"client:{cid}", "server")
    server.theta_c_global = ordered_mean(updated)
    server.round = t + 1
    mean_g = ordered_mean(client_grads)
    return RoundMetrics(t, "sfl", ordered_mean_scalar(losses.values()),
                        float(np.linalg.norm(mean_g)), hp.K * hp.batch_size)


def run_round_zosfl(sim: Simulation, perturb_fn=gaussian_vector) -> RoundMetrics:
    """Backprop-free baseline: full-model two-point estimation per client.

    Client m perturbs its half along u_c and uploads both perturbed
    activations; the server evaluates the composite loss with its own half
    perturbed along u_s (forward passes only, no backward anywhere) and
    returns the central-difference scalar. Both halves then step along
    their own perturbation scaled by that shared scalar, and client models
    are averaged as in the first-order baseline.
    """
    hp, cfg, server, ledger = sim.hp, sim.model_cfg, sim.server, sim.ledger
    t = server.round
    mu = hp.zo.mu
    selected = sample_clients(hp.M, hp.K, derive_stream(sim.root_seed, prng.STREAM_SAMPLING, t))
    batches = _client_batches(sim, selected, t)

    dir_c, dir_s, z_plus, z_minus = {}, {}, {}, {}
    for cid in selected:
        sim.clients[cid].theta_c = server.theta_c_global.copy()
        ledger.record(MessageKind.MODEL_DOWN, cfg.d_c * FLOAT_BYTES,
                      "server", f"client:{cid}")
        dir_c[cid] = perturb_fn(derive_stream(sim.root_seed, prng.STREAM_SPSA, t, cid, 1), cfg.d_c)
        dir_s[cid] = perturb_fn(derive_stream(sim.root_seed, prng.STREAM_SPSA, t, cid, 2), cfg.d_s)
        theta_c = sim.clients[cid].theta_c
        z_plus[cid] = model.client_forward(theta_c + mu * dir_c[cid], batches[cid], cfg)
        z_minus[cid] = model.client_forward(theta_c - mu * dir_c[cid], batches[cid], cfg)
        ledger.record(MessageKind.ACTIVATION_UP, 2 * z_plus[cid].size * FLOAT_BYTES,
                      f"client:{cid}", "server")
        ledger.record(MessageKind.LABEL_UP, label_payload_bytes(hp.batch_size, cfg),
                      f"client:{cid}", "server")

    losses, diffs, server_steps = {}, {}, []
    for cid in selected:
        loss_plus = model.server_loss(server.theta_s + mu * dir_s[cid],
                                      z_plus[cid], batches[cid].labels, cfg)
        loss_minus = model.server_loss(server.theta_s - mu * dir_s[cid],
                                       z_minus[cid], batches[cid].labels, cfg)
        losses[cid] = 0.5 * (loss_plus + loss_minus)
        diffs[cid] = (loss_plus - loss_minus) / (2.0 * mu)
        server_steps.append(diffs[cid] * dir_s[cid])
        ledger.record(MessageKind.SCALAR_DOWN, FLOAT_BYTES, "server", f"client:{cid}")
    server.theta_s = server.theta_s - np.float64(hp.eta) * ordered_mean(server_steps)

    updated, grads = [], []
    for cid in selected:
        client = sim.clients[cid]
        g_hat = diffs[cid] * dir_c[cid]
        grads.append(g_hat)
        client.theta_c = client.theta_c - np.float64(hp.eta) * g_hat
        client.t_sync = t + 1
        updated.append(client.theta_c)
        ledger.record(MessageKind.MODEL_UP, cfg.d_c * FLOAT_BYTES,
                      f"client:{cid}", "server")
    server.theta_c_global = ordered_mean(updated)
    server.round = t + 1
    return RoundMetrics(t, "zosfl", ordered_mean_scalar(losses.values()),
                        float(np.linalg.norm(ordered_mean(grads))),
                        hp.K * hp.batch_size)


def run_round(sim: Simulation, perturb_fn=gaussian_vector) -> RoundMetrics:
    if sim.protocol == "hosfl":
        return run_round_hosfl(sim, perturb_fn)
    if sim.protocol == "sfl":
        return run_round_sfl(sim)
    if sim.protocol == "zosfl":
        return run_round_zosfl(sim, perturb_fn)
    raise ValueError(f"unknown protocol {sim.protocol!r}")


def planned_rounds(hp: HyperParams, sample_budget: int | None) -> int:
    """Round count: drain the sample budget when one is set, else run T rounds."""
    if sample_budget is None:
        return hp.T
    per_round = hp.K * hp.batch_size
    return -(-sample_budget // per_round)  # ceil


def run_training(sim: Simulation, sample_budget: int | None = None,
                 perturb_fn=gaussian_vector) -> list:
    """Drive rounds to completion and return the per-round metrics log."""
    log = []
    for _ in range(planned_rounds(sim.hp, sample_budget)):
        log.append(run_round(sim, perturb_fn))
        sim.ledger.close_round()
    return log
