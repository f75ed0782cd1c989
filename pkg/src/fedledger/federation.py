"""Round orchestration: local training, aggregation, ledger-mediated rounds.

Each round distributes the global model, rebuilds every client's
personalization mask from the Fisher importance of its previous local model
(round 1 starts all-shared: there is no previous local model yet), trains
locally with proximal regularization, clips and noises the update, stores the
noisy update in the content store, submits its address to the ledger, and
finally aggregates, records the new global model on-chain, and seals the
round's block. Every source of randomness is an addressable stream keyed by
(seed, purpose, round, client), so client work can run on any number of
threads without changing a single bit of the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import fmean

import numpy as np

from .backend import kernels
from .cas import COORDINATOR_ID, ContentStore, encode_update
from .data import ClientPartition, Dataset
from .ledger import Ledger, Receipt, make_transaction
from .model import (
    Batch,
    ConfigurationError,
    ParameterVector,
    accuracy,
    init_params,
    layout_dims,
    loss,
    mlp_layout,
)
from .personalization import (
    DegenerateModelError,
    PersonalizationMask,
    all_shared_mask,
    build_mask,
    fisher_diagonal,
    layer_importance,
    merge_models,
)
from .privacy import PrivacySpec, AccountantState, adaptive_noise, calibrate_noise, clip_update, rdp_to_dp
from .rng import RngStream, derive_key

AGGREGATION_MODES = ("uniform", "weighted")


class DivergenceError(RuntimeError):
    """Local training produced a non-finite loss."""


class LedgerVerificationError(RuntimeError):
    """Chain verification failed after sealing a round."""


@dataclass(frozen=True)
class TrainingConfig:
    global_rounds: int = 15
    local_epochs: int = 3
    learning_rate: float = 1e-3
    lambda1: float = 0.0
    lambda2: float = 0.0
    tau: float = 0.3
    batch_size: int = 32
    aggregation: str = "uniform"
    seed: int = 0
    hidden_dim: int = 32
    fisher_max_samples: int = 256

    def __post_init__(self):
        if self.global_rounds < 0 or self.local_epochs < 0:
            raise ValueError("round/epoch counts must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularization weights must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if self.batch_size < 1 or self.hidden_dim < 1 or self.fisher_max_samples < 1:
            raise ValueError("batch_size, hidden_dim, fisher_max_samples must be >= 1")
        if self.aggregation not in AGGREGATION_MODES:
            raise ValueError(f"aggregation must be one of {AGGREGATION_MODES}")


@dataclass
class ClientState:
    client_id: int
    indices: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray
    prev_local: ParameterVector

    @property
    def num_samples(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    epsilon_target: float
    seed: int
    mean_accuracy: float
    mean_loss: float
    epsilon_spent: float
    gas_total: int
    mean_latency_s: float
    store_total_bytes: int

    def __post_init__(self):
        if not 0.0 <= self.mean_accuracy <= 1.0:
            raise ValueError("accuracy out of [0, 1]")
        if self.epsilon_spent > self.epsilon_target + 1e-9:
            raise ValueError("spent epsilon exceeds the target budget")


@dataclass(frozen=True)
class RoundResult:
    round: int
    global_params: ParameterVector
    metrics: MetricsRecord
    ledger_receipts: tuple[Receipt, ...]


def local_train(
    client: ClientState,
    global_params: ParameterVector,
    mask: PersonalizationMask,
    config: TrainingConfig,
    round_index: int,
) -> tuple[ParameterVector, ParameterVector]:
    """Run the local epochs and return (update, trained model).

    The starting point merges the client's previous local model (masked
    coordinates) with the global model. Minibatch SGD minimizes the local
    cross-entropy plus a proximal pull back toward the starting point,
    weighted lambda1 on personalized coordinates and lambda2 on shared ones.
    The update is (trained - start); pure, so repeated calls are bit-identical.
    """
    merged = merge_models(client.prev_local, global_params, mask)
    layout = merged.layout
    dims = layout_dims(layout)
    w0 = merged.values
    w = w0.copy()
    n = client.num_samples
    use_prox = config.lambda1 != 0.0 or config.lambda2 != 0.0
    lam = np.where(mask.bits, config.lambda1, config.lambda2) if use_prox else None

    for epoch in range(config.local_epochs):
        order = RngStream(
            config.seed, "shuffle", client.client_id, round_index, epoch
        ).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss_val, grad = kernels.loss_and_grad(
                w, client.inputs[idx], client.labels[idx], *dims
            )
            if not math.isfinite(loss_val):
                raise DivergenceError(
                    f"non-finite loss in round {round_index}, client {client.client_id}"
                )
            if use_prox:
                grad = grad + lam * (w - w0)
            w -= config.learning_rate * grad

    return ParameterVector(w - w0, layout), ParameterVector(w, layout)


def aggregate(updates: list[ParameterVector], weights: list[float]) -> ParameterVector:
    """Weighted coordinate-wise mean of the updates."""
    if not updates:
        raise ValueError("nothing to aggregate")
    if len(weights) != len(updates):
        raise ValueError("one weight per update required")
    layout = updates[0].layout
    if any(u.layout != layout for u in updates):
        raise ConfigurationError("updates have mismatched layouts")
    w = np.asarray(weights, dtype=np.float64)
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
    acc = np.zeros(layout.total_dim)
    for update, wi in zip(updates, w):
        acc += wi * update.values
    return ParameterVector(acc, layout)


def _client_keys(seed: int, num_clients: int) -> dict[int, bytes]:
    keys = {k: derive_key(seed, "client-key", k) for k in range(num_clients)}
    keys[COORDINATOR_ID] = derive_key(seed, "client-key", COORDINATOR_ID)
    return keys


def _round_mask(
    client: ClientState,
    layout,
    config: TrainingConfig,
    round_index: int,
    num_classes: int,
) -> PersonalizationMask:
    if round_index == 1:
        # No previous local model yet: start from the pure global init.
        return all_shared_mask(layout, config.tau)
    if client.num_samples > config.fisher_max_samples:
        sel = RngStream(config.seed, "fisher", round_index, client.client_id).permutation(
            client.num_samples
        )[: config.fisher_max_samples]
        shard = Dataset(client.inputs[sel], client.labels[sel], num_classes)
    else:
        shard = Dataset(client.inputs, client.labels, num_classes)
    fisher = fisher_diagonal(client.prev_local, shard)
    try:
        profile = layer_importance(fisher, layout)
    except DegenerateModelError:
        return all_shared_mask(layout, config.tau)
    return build_mask(profile, config.tau)


def run_training(
    dataset: Dataset,
    partition: ClientPartition,
    priv: PrivacySpec,
    config: TrainingConfig,
    ledger: Ledger,
    store: ContentStore,
    *,
    eval_dataset: Dataset | None = None,
    client_workers: int = 1,
    force_sigma: tuple[float, float] | None = None,
    mask_override: PersonalizationMask | None = None,
) -> list[RoundResult]:
    """Run the full pipeline for config.global_rounds rounds.

    ``force_sigma`` and ``mask_override`` are test hooks: they bypass noise
    calibration / Fisher masking (with ``force_sigma`` no privacy is spent
    and the reported epsilon stays 0).
    """
    if partition.num_samples != len(dataset):
        raise ConfigurationError("partition does not index this dataset")
    if priv.rounds != config.global_rounds:
        raise ConfigurationError(
            f"privacy spec calibrated for {priv.rounds} rounds, training runs "
            f"{config.global_rounds}"
        )
    num_clients = partition.num_clients
    layout = mlp_layout(dataset.input_dim, config.hidden_dim, dataset.num_classes)
    global_params = init_params(layout, RngStream(config.seed, "init"))
    if config.global_rounds == 0:
        return []

    keys = _client_keys(config.seed, num_clients)
    if not ledger.registered_ids:
        for client_id in sorted(keys):
            ledger.register_client(client_id, keys[client_id])
    elif ledger.registered_ids != frozenset(keys):
        raise ConfigurationError("ledger registrations do not match the partition")

    if force_sigma is not None:
        sigma_u, sigma_v = force_sigma
        noise_multiplier = None
    else:
        scales = calibrate_noise(priv)
        sigma_u, sigma_v = scales.sigma_u, scales.sigma_v
        noise_multiplier = scales.noise_multiplier
    accountant = AccountantState()

    clients = [
        ClientState(
            client_id=k,
            indices=shard,
            inputs=dataset.inputs[shard],
            labels=dataset.labels[shard],
            prev_local=global_params,
        )
        for k, shard in enumerate(partition.shards)
    ]
    if config.aggregation == "uniform":
        weights = [1.0 / num_clients] * num_clients
    else:
        weights = [c.num_samples / partition.num_samples for c in clients]

    eval_ds = eval_dataset if eval_dataset is not None else dataset
    eval_batch = Batch(eval_ds.inputs, eval_ds.labels)

    results: list[RoundResult] = []
    gas_total = 0

    def client_step(client: ClientState, round_index: int):
        if mask_override is not None:
            mask = mask_override
        else:
            mask = _round_mask(client, layout, config, round_index, dataset.num_classes)
        update, trained = local_train(client, global_params, mask, config, round_index)
        clipped = clip_update(update, priv.clip_c)
        noised = adaptive_noise(
            clipped, mask, sigma_u, sigma_v,
            RngStream(config.seed, "noise", round_index, client.client_id),
        )
        return noised, trained

    pool = ThreadPoolExecutor(max_workers=client_workers) if client_workers > 1 else None
    try:
        for t in range(1, config.global_rounds + 1):
            if pool is not None:
                futures = [pool.submit(client_step, c, t) for c in clients]
                stepped = [f.result() for f in futures]
            else:
                stepped = [client_step(c, t) for c in clients]

            # Ledger and store writes are single-writer, in client-id order.
            receipts = []
            noisy_updates = []
            for client, (noised, trained) in zip(clients, stepped):
                client.prev_local = trained
                blob = encode_update(t, client.client_id, noised.values)
                address = store.put(blob)
                tx = make_transaction(keys[client.client_id], t, client.client_id,
                                      address, len(blob))
                receipts.append(ledger.submit_update(tx))
                noisy_updates.append(noised)

            agg = aggregate(noisy_updates, weights)
            global_params = ParameterVector(global_params.values + agg.values, layout)

            global_blob = encode_update(t, COORDINATOR_ID, global_params.values)
            global_address = store.put(global_blob)
            coord_tx = make_transaction(keys[COORDINATOR_ID], t, COORDINATOR_ID,
                                        global_address, len(global_blob))
            coord_receipt = ledger.submit_update(coord_tx)
            ledger.seal_block()
            report = ledger.verify_chain()
            if not report.valid:
                raise LedgerVerificationError(
                    f"round {t}: chain invalid at block {report.block_index}: {report.reason}"
                )

            if noise_multiplier is not None:
                accountant.add_release(noise_multiplier)
                epsilon_spent = rdp_to_dp(accountant, priv.delta)[0]
            else:
                epsilon_spent = 0.0

            gas_total += sum(r.gas_used for r in receipts)
            metrics = MetricsRecord(
                round=t,
                epsilon_target=priv.epsilon_target,
                seed=config.seed,
                mean_accuracy=accuracy(global_params, eval_batch),
                mean_loss=loss(global_params, eval_batch),
                epsilon_spent=epsilon_spent,
                gas_total=gas_total,
                mean_latency_s=fmean(r.latency for r in receipts),
                store_total_bytes=store.total_size(),
            )
            results.append(
                RoundResult(t, global_params.copy(), metrics, tuple(receipts) + (coord_receipt,))
            )
    finally:
        if pool is not None:
            pool.shutdown()
    return results
