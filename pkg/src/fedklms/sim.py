"""Deterministic federated simulator.

One process plays the server and every client.  All randomness flows from the
config seed through labeled stream keys, so a rerun of the same config is
bit-identical, including the metrics files.

Per round: sample participants without replacement, run each client's local
computation, turn it into a message (codec-compressed, method-specific
baseline, or raw), pass every compressed message through the real wire format,
decode, aggregate, evaluate.  Bits are accounted per client message and
averaged into bits per parameter (payload = the index/sign/level content;
total additionally counts codec header and block-location overhead).

Block-partition lifecycle for codec variants: the first round is always a
location round (every client cuts its own blocks from its per-coordinate KL
and ships the cut points); the server merges them into the shared partition
for later rounds.  After a location round the flag drops; on ordinary rounds
it is re-raised only when the mean transmitted block KL drifts strictly
outside the configured band.

mean_kl_per_param is reconstructed from the transmitted 32-bit per-client
averages (avg_kl * num_blocks / d); for non-codec variants it is reported
as 0.0 rather than computed out of band.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import (
    BlockPartition,
    aggregate_block_locations,
    decode_update,
    deserialize_update,
    encode_update,
    serialize_update,
    should_update_partition,
    split_blocks_adaptive,
    split_blocks_fixed,
)
from .config import ExperimentConfig
from .data import (
    Dataset,
    load_csv,
    load_idx_pair,
    make_blobs,
    make_separable,
    split_iid,
    split_skewed,
)
from .distributions import kl_per_coordinate
from .methods import (
    FedPMState,
    bayes_agg,
    elias_gamma_bits,
    fedpm_client_train,
    fedpm_codec_pair,
    fedpm_sample_mask,
    qsgd_client_distribution,
    qsgd_klms_global,
    qsgd_quantize,
    quantization_levels,
    sgld_client_distributions,
    sgld_server_step,
    signsgd_client_distribution,
    signsgd_global_distribution,
    signsgd_temperature,
)
from .models import build_model, evaluate_accuracy
from .streams import StreamKey, derive_stream

NORM_BITS = 32  # side-channel for one float32 norm


@dataclass
class RoundMetrics:
    round_index: int
    bpp_payload: float
    bpp_total: float
    accuracy: float
    mean_kl_per_param: float
    partition_updated: bool

    def csv_row(self) -> str:
        return (
            f"{self.round_index},{self.bpp_payload!r},{self.bpp_total!r},"
            f"{self.accuracy!r},{self.mean_kl_per_param!r},"
            f"{'true' if self.partition_updated else 'false'}"
        )


CSV_HEADER = "round,bpp_payload,bpp_total,accuracy,mean_kl_per_param,partition_updated"


@dataclass
class ServerState:
    """Everything that survives from one round to the next."""

    round_index: int
    weights: np.ndarray  # current global parameters (fedpm: frozen weights)
    fedpm: FedPMState | None
    partition: BlockPartition
    location_round: bool  # clients ship block locations this round
    qsgd_patterns: list[np.ndarray]  # previous round's decoded sign patterns
    bits_sent_total: int = 0
    bits_sent_payload: int = 0


def _load_dataset(cfg: ExperimentConfig, root: StreamKey) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d.kind in ("separable", "blobs"):
        # one pooled draw so train and test share the labeling concept,
        # then an i.i.d. head/tail split
        stream = derive_stream(root.child("data"))
        n = d.num_points + d.test_points
        if d.kind == "separable":
            full = make_separable(n, d.num_features, d.margin, stream)
        else:
            full = make_blobs(n, d.num_features, d.num_classes, d.spread, stream)
        train = full.subset(np.arange(d.num_points))
        test = full.subset(np.arange(d.num_points, n))
        return train, test
    if d.kind == "csv":
        return load_csv(d.train), load_csv(d.test)
    if d.kind == "idx":
        return (
            load_idx_pair(d.train_images, d.train_labels, d.train_limit),
            load_idx_pair(d.test_images, d.test_labels, d.test_limit),
        )
    raise ValueError(f"unknown dataset kind: {d.kind}")


def _local_sgd(model, w0, X, y, lr, epochs, batch_size, stream):
    """Plain minibatch SGD from w0; returns the final weights."""
    w = w0.copy()
    n = X.shape[0]
    batch = min(batch_size, n)
    iters = epochs * max(1, -(-n // batch))
    for _ in range(iters):
        idx = stream.integers(batch, n)
        _, g = model.loss_and_grad(w, X[idx], y[idx])
        w -= lr * g
    return w


def _stochastic_gradient(model, w, X, y, batch_size, stream):
    """N_c * mean-batch gradient, the unbiased full-sum estimate."""
    n = X.shape[0]
    batch = min(batch_size, n)
    idx = stream.integers(batch, n)
    _, g = model.loss_and_grad(w, X[idx], y[idx])
    return n * g


@dataclass
class _Message:
    vector: np.ndarray  # decoded contribution, ready to aggregate
    payload_bits: int
    total_bits: int
    avg_block_kl: float = 0.0
    num_blocks: int = 0
    partition: BlockPartition | None = None


def _codec_round_trip(q, p, state, cfg, key_base, round_index, client_id, kl_vec):
    """Encode with the round's partition policy, serialize, parse, decode."""
    codec = cfg.codec
    if state.location_round:
        partition = split_blocks_adaptive(kl_vec, codec)
    else:
        partition = state.partition
    upd, cost = encode_update(
        q, p, partition, codec, key_base,
        round_index=round_index, client_id=client_id,
        include_locations=state.location_round,
    )
    blob = serialize_update(upd, codec)
    if len(blob) != (cost.total_bits + 7) // 8:
        raise AssertionError("wire length disagrees with bit accounting")
    received = deserialize_update(blob, codec)
    decoded = decode_update(p, None if state.location_round else partition,
                           codec, key_base, received)
    return decoded, received, cost, partition


def run_round(
    state: ServerState,
    cfg: ExperimentConfig,
    model,
    shards: list[np.ndarray],
    train: Dataset,
    test: Dataset,
    root: StreamKey,
) -> tuple[ServerState, RoundMetrics]:
    t = state.round_index
    round_key = root.child("round", t)
    order = derive_stream(round_key.child("select")).permutation(cfg.num_clients)
    participants = sorted(int(c) for c in order[: cfg.clients_per_round])

    dim = state.fedpm.probs.shape[0] if cfg.method == "fedpm" else state.weights.shape[0]
    messages: list[_Message] = []
    for c in participants:
        shard = shards[c]
        X, y = train.features[shard], train.labels[shard]
        client_key = round_key.child("client", c)
        local_stream = derive_stream(client_key.child("local"))
        messages.append(
            _client_message(state, cfg, model, X, y, client_key, local_stream, t, c, dim)
        )

    new_state = _aggregate(state, cfg, model, messages, participants, round_key, dim)

    payload = float(np.mean([m.payload_bits for m in messages]))
    total = float(np.mean([m.total_bits for m in messages]))
    if cfg.variant == "klms" and cfg.method != "none":
        mean_kl = float(
            np.mean([m.avg_block_kl * m.num_blocks / dim for m in messages])
        )
    else:
        mean_kl = 0.0

    if cfg.method == "fedpm":
        eval_mask = fedpm_sample_mask(new_state.fedpm.probs, derive_stream(root.child("eval")))
        eval_w = eval_mask * new_state.weights
    else:
        eval_w = new_state.weights
    accuracy = evaluate_accuracy(model, eval_w, test.features, test.labels)

    metrics = RoundMetrics(
        round_index=t,
        bpp_payload=payload / dim,
        bpp_total=total / dim,
        accuracy=accuracy,
        mean_kl_per_param=mean_kl,
        partition_updated=state.location_round and cfg.variant == "klms"
        and cfg.method != "none",
    )
    new_state.bits_sent_total = state.bits_sent_total + int(
        sum(m.total_bits for m in messages)
    )
    new_state.bits_sent_payload = state.bits_sent_payload + int(
        sum(m.payload_bits for m in messages)
    )
    new_state.round_index = t + 1
    return new_state, metrics


def _client_message(state, cfg, model, X, y, client_key, local_stream, t, c, dim):
    method, variant = cfg.method, cfg.variant

    if method == "none":
        w_local = _local_sgd(model, state.weights, X, y, cfg.qsgd.local_lr,
                             cfg.qsgd.local_epochs, cfg.qsgd.batch_size, local_stream)
        delta = w_local - state.weights
        return _Message(vector=delta, payload_bits=32 * dim, total_bits=32 * dim)

    if method == "fedpm":
        probs = fedpm_client_train(
            state.fedpm.probs, state.weights, model, X, y, cfg.fedpm, local_stream
        )
        if variant == "baseline":
            mask = fedpm_sample_mask(probs, derive_stream(client_key.child("mask")))
            return _Message(vector=mask, payload_bits=dim, total_bits=dim)
        q, p = fedpm_codec_pair(probs, state.fedpm.probs)
        kl_vec = kl_per_coordinate(q, p)
        decoded, received, cost, partition = _codec_round_trip(
            q, p, state, cfg, client_key, t, c, kl_vec
        )
        return _Message(
            vector=decoded,
            payload_bits=cost.payload_bits,
            total_bits=cost.total_bits,
            avg_block_kl=received.avg_block_kl,
            num_blocks=received.num_blocks,
            partition=partition,
        )

    if method == "qsgd":
        w_local = _local_sgd(model, state.weights, X, y, cfg.qsgd.local_lr,
                             cfg.qsgd.local_epochs, cfg.qsgd.batch_size, local_stream)
        delta = w_local - state.weights
        if variant == "baseline":
            quant = qsgd_quantize(delta, cfg.qsgd.levels,
                                  derive_stream(client_key.child("quant")))
            norm = float(np.linalg.norm(delta))
            levels = quantization_levels(quant, norm, cfg.qsgd.levels)
            bits = elias_gamma_bits(levels)
            return _Message(vector=quant, payload_bits=bits, total_bits=bits)
        q = qsgd_client_distribution(delta)
        p = qsgd_klms_global(state.qsgd_patterns, dim=dim)
        kl_vec = kl_per_coordinate(q, p)
        pattern, received, cost, partition = _codec_round_trip(
            q, p, state, cfg, client_key, t, c, kl_vec
        )
        return _Message(
            vector=q.magnitude * pattern,
            payload_bits=cost.payload_bits + NORM_BITS,
            total_bits=cost.total_bits + NORM_BITS,
            avg_block_kl=received.avg_block_kl,
            num_blocks=received.num_blocks,
            partition=partition,
        )

    if method == "signsgd":
        w_local = _local_sgd(model, state.weights, X, y, cfg.signsgd.local_lr,
                             cfg.signsgd.local_epochs, cfg.signsgd.batch_size,
                             local_stream)
        delta = w_local - state.weights
        n = X.shape[0]
        iters = cfg.signsgd.local_epochs * max(
            1, -(-n // min(cfg.signsgd.batch_size, n))
        )
        temp = signsgd_temperature(delta, cfg.signsgd, iters)
        q = signsgd_client_distribution(delta, temp)
        if variant == "baseline":
            signs = q.sample(0, dim, derive_stream(client_key.child("sign")), count=1)[0]
            return _Message(vector=signs, payload_bits=dim, total_bits=dim)
        p = signsgd_global_distribution(dim)
        kl_vec = kl_per_coordinate(q, p)
        signs, received, cost, partition = _codec_round_trip(
            q, p, state, cfg, client_key, t, c, kl_vec
        )
        return _Message(
            vector=signs,
            payload_bits=cost.payload_bits,
            total_bits=cost.total_bits,
            avg_block_kl=received.avg_block_kl,
            num_blocks=received.num_blocks,
            partition=partition,
        )

    if method == "sgld":
        grad = _stochastic_gradient(model, state.weights, X, y,
                                    cfg.sgld.batch_size, local_stream)
        sigma = cfg.sgld.sigma_s(cfg.clients_per_round)
        if variant == "baseline":
            quant = qsgd_quantize(grad, cfg.qsgd.levels,
                                  derive_stream(client_key.child("quant")))
            norm = float(np.linalg.norm(grad))
            levels = quantization_levels(quant, norm, cfg.qsgd.levels)
            bits = elias_gamma_bits(levels)
            return _Message(vector=quant, payload_bits=bits, total_bits=bits)
        q, p = sgld_client_distributions(grad, sigma)
        kl_vec = kl_per_coordinate(q, p)
        decoded, received, cost, partition = _codec_round_trip(
            q, p, state, cfg, client_key, t, c, kl_vec
        )
        return _Message(
            vector=decoded,
            payload_bits=cost.payload_bits,
            total_bits=cost.total_bits,
            avg_block_kl=received.avg_block_kl,
            num_blocks=received.num_blocks,
            partition=partition,
        )

    raise ValueError(f"unknown method: {method}")


def _aggregate(state, cfg, model, messages, participants, round_key, dim):
    method, variant = cfg.method, cfg.variant
    new_partition = state.partition
    next_location_round = False
    if variant == "klms" and method != "none":
        if state.location_round:
            new_partition = aggregate_block_locations(
                [m.partition for m in messages], cfg.codec.max_block_size
            )
            next_location_round = False
        else:
            mean_avg_kl = float(np.mean([m.avg_block_kl for m in messages]))
            next_location_round = should_update_partition(mean_avg_kl, cfg.codec)

    fedpm_state = state.fedpm
    weights = state.weights
    qsgd_patterns = state.qsgd_patterns

    if method == "fedpm":
        masks = [m.vector for m in messages]
        fedpm_state = bayes_agg(masks, state.fedpm, cfg.fedpm, state.round_index)
    elif method == "sgld":
        decoded = [m.vector for m in messages]
        weights = sgld_server_step(weights, decoded, cfg.sgld)
        if variant == "baseline" and cfg.sgld.noise_enabled:
            noise = derive_stream(round_key.child("servernoise")).gaussians(dim)
            weights = weights + np.sqrt(2.0 * cfg.sgld.step_gamma) * noise
    elif method == "qsgd":
        mean_delta = np.mean([m.vector for m in messages], axis=0)
        weights = weights + cfg.qsgd.server_lr * mean_delta
        if variant == "klms":
            qsgd_patterns = [np.sign(m.vector) for m in messages]
    elif method == "signsgd":
        mean_sign = np.mean([m.vector for m in messages], axis=0)
        weights = weights + cfg.signsgd.server_lr * mean_sign
    elif method == "none":
        mean_delta = np.mean([m.vector for m in messages], axis=0)
        weights = weights + mean_delta

    return ServerState(
        round_index=state.round_index,
        weights=weights,
        fedpm=fedpm_state,
        partition=new_partition,
        location_round=next_location_round,
        qsgd_patterns=qsgd_patterns,
        bits_sent_total=state.bits_sent_total,
        bits_sent_payload=state.bits_sent_payload,
    )


def init_state(cfg: ExperimentConfig, model, root: StreamKey) -> ServerState:
    init_stream = derive_stream(root.child("winit"))
    if cfg.method == "fedpm":
        weights = model.init_params(init_stream)  # frozen for the whole run
        fedpm_state = FedPMState.initial(model.dim, 0.5, cfg.fedpm.prior_lambda)
    else:
        weights = model.init_params(init_stream)
        fedpm_state = None
    return ServerState(
        round_index=0,
        weights=weights,
        fedpm=fedpm_state,
        partition=split_blocks_fixed(model.dim, cfg.codec.max_block_size),
        location_round=True,  # first round always ships locations
        qsgd_patterns=[],
    )


def run_experiment(cfg: ExperimentConfig) -> tuple[list[RoundMetrics], dict]:
    root = StreamKey(cfg.seed)
    train, test = _load_dataset(cfg, root)
    num_classes = max(int(train.labels.max()), int(test.labels.max())) + 1
    model = build_model(cfg.model.kind, train.num_features, num_classes,
                        cfg.model.hidden_units)
    split_stream = derive_stream(root.child("split"))
    if cfg.split.mode == "iid":
        shards = split_iid(train, cfg.num_clients, split_stream)
    else:
        shards = split_skewed(train, cfg.num_clients,
                              cfg.split.max_classes_per_client, split_stream)
    state = init_state(cfg, model, root)
    rows: list[RoundMetrics] = []
    for _ in range(cfg.rounds):
        state, metrics = run_round(state, cfg, model, shards, train, test, root)
        rows.append(metrics)
    summary = {
        "method": cfg.method,
        "variant": cfg.variant if cfg.method != "none" else "none",
        "seed": cfg.seed,
        "rounds": cfg.rounds,
        "num_clients": cfg.num_clients,
        "clients_per_round": cfg.clients_per_round,
        "model_dim": model.dim,
        "final_accuracy": rows[-1].accuracy,
        "best_accuracy": max(r.accuracy for r in rows),
        "mean_bpp_payload": float(np.mean([r.bpp_payload for r in rows])),
        "mean_bpp_total": float(np.mean([r.bpp_total for r in rows])),
        "total_bits_sent": state.bits_sent_total,
        "total_payload_bits_sent": state.bits_sent_payload,
        "location_rounds": sum(1 for r in rows if r.partition_updated),
    }
    return rows, summary


def write_metrics_csv(rows: list[RoundMetrics], path: str) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [CSV_HEADER] + [r.csv_row() for r in rows]
    out.write_text("\n".join(lines) + "\n")


def write_summary_json(summary: dict, path: str) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
