"""Training protocols: the message choreography between parties.

Four protocols share one rhythm. Every epoch the master draws a seeded
permutation of the shared rows and walks it in batches; every batch is a
fixed sequence of exchanges:

  linreg / logreg   batch -> partial_pred -> residual            (3 methods)
  split_mlp         batch -> activations  -> act_grad            (3 methods)
  he_logreg         batch -> enc_partial -> enc_residual
                    -> masked_enc_grad -> masked_grad            (5 methods)

The encrypted protocol runs under a Paillier key held by the arbiter,
with the sigmoid replaced by its degree-1 Taylor series (s(z) ~ 1/2 + z/4)
so the gradient stays linear in the ciphertexts. Parties mask their
encrypted gradients with fresh uniform mantissas before the arbiter
decrypts, so the arbiter never sees a bare gradient.

Aggregation order is fixed everywhere: member contributions fold in
ascending member index, the master's own part last. Evaluation epochs are
self-scheduled from the shared config (no extra control messages); under
he_logreg evaluation uses plaintext partials and is excluded from the
privacy story.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from random import Random
from typing import Sequence

from .errors import FrameError, ProtocolStateError, TopologyError
from .frame import ARBITER, MASTER, Message, PartyId
from .matching import RowIndex
from .metrics import MetricRecord, MetricsSink, TranscriptEntry, now_micros
from .models import LinearBlock, MasterHead, MemberMLP, sigmoid, softplus
from .paillier import (
    EncodedNumber,
    PublicKey,
    add_cipher,
    decode,
    decode_cipher_vector,
    decode_encoded_vector,
    decode_public_key,
    decrypt,
    encode,
    encode_cipher_vector,
    encode_encoded_vector,
    encode_public_key,
    encrypt,
    keygen,
    mul_scalar,
    sub_encoded,
)
from .seeds import substream
from .tensor import Tensor, axpy, concat_cols, select_rows

PROTOCOLS = ("linreg", "logreg", "he_logreg", "split_mlp")

METHOD_BATCH = "batch"
METHOD_PARTIAL = "partial_pred"
METHOD_RESIDUAL = "residual"
METHOD_PUBKEY = "pubkey"
METHOD_ENC_PARTIAL = "enc_partial"
METHOD_ENC_RESIDUAL = "enc_residual"
METHOD_MASKED_ENC_GRAD = "masked_enc_grad"
METHOD_MASKED_GRAD = "masked_grad"
METHOD_ACTIVATIONS = "activations"
METHOD_ACT_GRAD = "act_grad"
METHOD_EVAL = "eval_partial"

LN2 = math.log(2.0)
RESIDUAL_EXPONENT = -80  # encrypted residual: one Taylor scaling past -40


@dataclass(frozen=True)
class HeConfig:
    key_bits: int = 1024
    insecure_ok: bool = False


@dataclass(frozen=True)
class TrainConfig:
    protocol: str
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int
    he: HeConfig | None = None
    eval_every: int = 1
    hidden_size: int = 8

    def __post_init__(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be a positive finite number")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if (self.he is not None) != (self.protocol == "he_logreg"):
            raise ValueError("he settings are required for he_logreg and only there")


@dataclass
class ProtocolResult:
    final_loss: float | None
    blocks: dict[str, Tensor]
    transcript: list[TranscriptEntry] = field(default_factory=list)


def encode_indices(idx: Sequence[int]) -> bytes:
    return struct.pack(f"<{len(idx)}I", *idx)


def decode_indices(raw: bytes) -> list[int]:
    if len(raw) % 4:
        raise FrameError(f"index blob length {len(raw)} is not a multiple of 4")
    return list(struct.unpack(f"<{len(raw) // 4}I", raw))


def batch_count(n_rows: int, batch_size: int) -> int:
    return (n_rows + batch_size - 1) // batch_size


def _epoch_batches(n_rows: int, config: TrainConfig, epoch: int) -> list[list[int]]:
    perm = list(range(n_rows))
    substream(config.seed, "batch-perm", epoch).shuffle(perm)
    bs = config.batch_size
    return [perm[i:i + bs] for i in range(0, n_rows, bs)]


def _eval_due(epoch: int, config: TrainConfig) -> bool:
    return (epoch + 1) % config.eval_every == 0


def _fold(parts: list[Sequence[float]]) -> list[float]:
    """Elementwise sum, folding the parts strictly in the given order."""
    acc = list(parts[0])
    for part in parts[1:]:
        for i, v in enumerate(part):
            acc[i] = acc[i] + v
    return acc


def _append_ones(x: Tensor) -> Tensor:
    return concat_cols([x, Tensor(x.rows, 1, (1.0,) * x.rows)])


def _slice_cols(t: Tensor, j0: int, j1: int) -> Tensor:
    flat: list[float] = []
    for i in range(t.rows):
        flat.extend(t.row(i)[j0:j1])
    return Tensor(t.rows, j1 - j0, tuple(flat))


def _aligned(dataset, row_index: RowIndex) -> Tensor:
    return select_rows(dataset.features, row_index.positions())


# ---------------------------------------------------------------------------
# metrics

def auc_rank(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Area under the ROC curve by the rank statistic, ties averaged.

    Degenerate single-class inputs return 0.5 by convention.
    """
    n = len(scores)
    pos = sum(1 for y in labels if y >= 0.5)
    neg = n - pos
    if pos == 0 or neg == 0:
        return 0.5
    order = sorted(range(n), key=lambda i: scores[i])
    ranks = [0.0] * n
    i = 0
    next_rank = 1
    while i < n:
        j = i
        while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        avg = (next_rank + next_rank + (j - i)) / 2.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        next_rank += j - i + 1
        i = j + 1
    rank_sum = sum(ranks[i] for i in range(n) if labels[i] >= 0.5)
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def compute_metrics(protocol: str, scores: Sequence[float], labels: Sequence[float]) -> dict:
    """loss/accuracy/auc over full-pass logits (raw predictions for linreg)."""
    n = len(scores)
    if protocol == "linreg":
        loss = sum(0.5 * (z - y) ** 2 for z, y in zip(scores, labels)) / n
        threshold = 0.5
    elif protocol == "he_logreg":
        # Taylor surrogate of the log loss, matching the trained objective.
        loss = sum(LN2 + (0.5 - y) * z + z * z / 8.0 for z, y in zip(scores, labels)) / n
        threshold = 0.0
    else:
        loss = sum(softplus(z) - y * z for z, y in zip(scores, labels)) / n
        threshold = 0.0
    hits = sum(
        1 for z, y in zip(scores, labels) if (z >= threshold) == (y >= 0.5)
    )
    return {"loss": loss, "accuracy": hits / n, "auc": auc_rank(scores, labels)}


def _log_eval(sink: MetricsSink | None, party: PartyId, epoch_no: int, metrics: dict) -> None:
    if sink is None:
        return
    for name in ("loss", "accuracy", "auc"):
        sink.log_metric(MetricRecord(
            ts_unix_micros=now_micros(), party=party, epoch=epoch_no,
            name=name, value=metrics[name],
        ))


# ---------------------------------------------------------------------------
# plaintext linear and logistic regression

def _plain_master(comm, dataset, row_index: RowIndex, config: TrainConfig,
                  sink: MetricsSink | None, logistic: bool) -> ProtocolResult:
    me = comm.my_id
    members = comm.members()
    x = _append_ones(_aligned(dataset, row_index))
    y = select_rows(dataset.labels, row_index.positions())
    block = LinearBlock.init(x.cols, substream(config.seed, "init", str(me)))
    n = len(row_index.shared_order)
    final_loss = None
    for epoch in range(config.epochs):
        total = 0.0
        batches = _epoch_batches(n, config, epoch)
        for idx in batches:
            comm.broadcast(
                Message(METHOD_BATCH, me, me, blobs={"idx": encode_indices(idx)}),
                members,
            )
            xb = select_rows(x, idx)
            yb = select_rows(y, idx)
            u_own = block.forward_partial(xb)
            gathered = comm.gather(members, METHOD_PARTIAL)
            z = _fold([m.tensors["u"].data for m in gathered] + [u_own.data])
            if logistic:
                d = tuple(sigmoid(zi) - yi for zi, yi in zip(z, yb.data))
                total += sum(softplus(zi) - yi * zi for zi, yi in zip(z, yb.data)) / len(idx)
            else:
                d = tuple(zi - yi for zi, yi in zip(z, yb.data))
                total += sum(0.5 * di * di for di in d) / len(idx)
            d_t = Tensor(len(idx), 1, d)
            comm.broadcast(Message(METHOD_RESIDUAL, me, me, tensors={"d": d_t}), members)
            block.backward_partial(xb, d_t, config.learning_rate, len(idx))
        final_loss = total / len(batches)
        if _eval_due(epoch, config):
            _eval_master_linear(comm, config, x, y, block, epoch + 1, sink)
    return ProtocolResult(final_loss, {"w": block.weights}, comm.transcript)


def _plain_member(comm, dataset, row_index: RowIndex, config: TrainConfig,
                  sink: MetricsSink | None) -> ProtocolResult:
    me = comm.my_id
    x = _aligned(dataset, row_index)
    block = LinearBlock.init(x.cols, substream(config.seed, "init", str(me)))
    n = len(row_index.shared_order)
    for epoch in range(config.epochs):
        for _ in range(batch_count(n, config.batch_size)):
            idx = decode_indices(comm.recv(MASTER, METHOD_BATCH).blobs["idx"])
            xb = select_rows(x, idx)
            comm.send(Message(METHOD_PARTIAL, me, MASTER,
                              tensors={"u": block.forward_partial(xb)}))
            d = comm.recv(MASTER, METHOD_RESIDUAL).tensors["d"]
            block.backward_partial(xb, d, config.learning_rate, len(idx))
        if _eval_due(epoch, config):
            comm.send(Message(METHOD_EVAL, me, MASTER,
                              tensors={"u": block.forward_partial(x)}))
    return ProtocolResult(None, {"w": block.weights}, comm.transcript)


def _eval_master_linear(comm, config: TrainConfig, x: Tensor, y: Tensor,
                        block: LinearBlock, epoch_no: int,
                        sink: MetricsSink | None) -> dict:
    gathered = comm.gather(comm.members(), METHOD_EVAL)
    u_own = block.forward_partial(x)
    z = _fold([m.tensors["u"].data for m in gathered] + [u_own.data])
    metrics = compute_metrics(config.protocol, z, y.data)
    _log_eval(sink, comm.my_id, epoch_no, metrics)
    return metrics


def run_linreg(comm, dataset, row_index: RowIndex, config: TrainConfig,
               sink: MetricsSink | None = None) -> ProtocolResult:
    if comm.my_id.role == "master":
        return _plain_master(comm, dataset, row_index, config, sink, logistic=False)
    return _plain_member(comm, dataset, row_index, config, sink)


def run_logreg(comm, dataset, row_index: RowIndex, config: TrainConfig,
               sink: MetricsSink | None = None) -> ProtocolResult:
    if comm.my_id.role == "master":
        return _plain_master(comm, dataset, row_index, config, sink, logistic=True)
    return _plain_member(comm, dataset, row_index, config, sink)


# ---------------------------------------------------------------------------
# arbitered encrypted logistic regression

def _he_masked_grad_round(comm, pk: PublicKey, xb: Tensor,
                          d_ct: list, enc_rng: Random, mask_rng: Random) -> list[float]:
    """One gradient exchange with the arbiter.

    Computes [[g_j]] = sum_i x_ij * [[d_i]] per local column (ascending i),
    adds a fresh uniform mask, sends the vector for decryption, and
    returns the unmasked plaintext gradients sum_i d_i * x_ij as floats.
    The mask add and subtract are exact on the fixed-point grid, so the
    detour through the arbiter changes nothing numerically.
    """
    me = comm.my_id
    grads_ct = []
    for j in range(xb.cols):
        acc = None
        for i in range(xb.rows):
            term = mul_scalar(d_ct[i], encode(xb.item(i, j), pk), pk)
            acc = term if acc is None else add_cipher(acc, term, pk)
        grads_ct.append(acc)
    masks = []
    masked = []
    for g_ct in grads_ct:
        mask = EncodedNumber(mask_rng.randrange(0, pk.n), g_ct.exponent, pk.n)
        masks.append(mask)
        masked.append(add_cipher(g_ct, encrypt(mask, pk, enc_rng), pk))
    comm.send(Message(METHOD_MASKED_ENC_GRAD, me, ARBITER,
                      blobs={"c": encode_cipher_vector(masked)}))
    reply = comm.recv(ARBITER, METHOD_MASKED_GRAD)
    plain = decode_encoded_vector(reply.blobs["m"], pk)
    if len(plain) != xb.cols:
        raise ProtocolStateError(
            f"arbiter returned {len(plain)} gradients for {xb.cols} columns"
        )
    return [decode(sub_encoded(p, m)) for p, m in zip(plain, masks)]


def _apply_grad(block: LinearBlock, grads: list[float], lr: float, batch: int) -> None:
    g = Tensor(len(grads), 1, tuple(grads))
    block.weights = axpy(-lr / batch, g, block.weights)


def _he_master(comm, dataset, row_index: RowIndex, config: TrainConfig,
               sink: MetricsSink | None) -> ProtocolResult:
    me = comm.my_id
    members = comm.members()
    pk = decode_public_key(comm.recv(ARBITER, METHOD_PUBKEY).blobs["pk"])
    x = _append_ones(_aligned(dataset, row_index))
    y = select_rows(dataset.labels, row_index.positions())
    block = LinearBlock.init(x.cols, substream(config.seed, "init", str(me)))
    enc_rng = substream(config.seed, "encrypt", str(me))
    mask_rng = substream(config.seed, "mask", str(me))
    quarter = encode(0.25, pk)
    n = len(row_index.shared_order)
    final_loss = None
    for epoch in range(config.epochs):
        for idx in _epoch_batches(n, config, epoch):
            comm.broadcast(
                Message(METHOD_BATCH, me, me, blobs={"idx": encode_indices(idx)}),
                members,
            )
            xb = select_rows(x, idx)
            yb = select_rows(y, idx)
            u_own = block.forward_partial(xb)
            gathered = comm.gather(members, METHOD_ENC_PARTIAL)
            vectors = [decode_cipher_vector(m.blobs["c"]) for m in gathered]
            d_ct = []
            for i in range(len(idx)):
                acc = vectors[0][i]
                for vec in vectors[1:]:
                    acc = add_cipher(acc, vec[i], pk)
                acc = add_cipher(acc, encrypt(encode(u_own.data[i], pk), pk, enc_rng), pk)
                shift = encrypt(
                    encode(0.5 - yb.data[i], pk, exponent=RESIDUAL_EXPONENT),
                    pk, enc_rng,
                )
                d_ct.append(add_cipher(mul_scalar(acc, quarter, pk), shift, pk))
            comm.broadcast(
                Message(METHOD_ENC_RESIDUAL, me, me,
                        blobs={"c": encode_cipher_vector(d_ct)}),
                members,
            )
            grads = _he_masked_grad_round(comm, pk, xb, d_ct, enc_rng, mask_rng)
            _apply_grad(block, grads, config.learning_rate, len(idx))
        if _eval_due(epoch, config):
            metrics = _eval_master_linear(comm, config, x, y, block, epoch + 1, sink)
            final_loss = metrics["loss"]
    return ProtocolResult(final_loss, {"w": block.weights}, comm.transcript)


def _he_member(comm, dataset, row_index: RowIndex, config: TrainConfig,
               sink: MetricsSink | None) -> ProtocolResult:
    me = comm.my_id
    pk = decode_public_key(comm.recv(ARBITER, METHOD_PUBKEY).blobs["pk"])
    x = _aligned(dataset, row_index)
    block = LinearBlock.init(x.cols, substream(config.seed, "init", str(me)))
    enc_rng = substream(config.seed, "encrypt", str(me))
    mask_rng = substream(config.seed, "mask", str(me))
    n = len(row_index.shared_order)
    for epoch in range(config.epochs):
        for _ in range(batch_count(n, config.batch_size)):
            idx = decode_indices(comm.recv(MASTER, METHOD_BATCH).blobs["idx"])
            xb = select_rows(x, idx)
            u = block.forward_partial(xb)
            cts = [encrypt(encode(ui, pk), pk, enc_rng) for ui in u.data]
            comm.send(Message(METHOD_ENC_PARTIAL, me, MASTER,
                              blobs={"c": encode_cipher_vector(cts)}))
            d_ct = decode_cipher_vector(comm.recv(MASTER, METHOD_ENC_RESIDUAL).blobs["c"])
            grads = _he_masked_grad_round(comm, pk, xb, d_ct, enc_rng, mask_rng)
            _apply_grad(block, grads, config.learning_rate, len(idx))
        if _eval_due(epoch, config):
            comm.send(Message(METHOD_EVAL, me, MASTER,
                              tensors={"u": block.forward_partial(x)}))
    return ProtocolResult(None, {"w": block.weights}, comm.transcript)


def run_he_logreg(comm, dataset, row_index: RowIndex, config: TrainConfig,
                  sink: MetricsSink | None = None) -> ProtocolResult:
    if comm.arbiter() is None:
        raise TopologyError("he_logreg needs an arbiter in the topology")
    if comm.my_id.role == "master":
        return _he_master(comm, dataset, row_index, config, sink)
    return _he_member(comm, dataset, row_index, config, sink)


def run_arbiter(comm, config: TrainConfig, n_shared: int,
                sink: MetricsSink | None = None) -> ProtocolResult:
    """Arbiter main loop: key distribution, then one decrypt round per
    party per batch. The arbiter never sees an unmasked gradient."""
    me = comm.my_id
    pk, sk = keygen(config.he.key_bits, config.seed, insecure=config.he.insecure_ok)
    comm.broadcast(
        Message(METHOD_PUBKEY, me, me, blobs={"pk": encode_public_key(pk)}),
        comm.peers(),
    )
    holders = [p for p in comm.parties if p.role != "arbiter"]
    per_epoch = batch_count(n_shared, config.batch_size)
    for _ in range(config.epochs):
        for _ in range(per_epoch):
            for msg in comm.gather(holders, METHOD_MASKED_ENC_GRAD):
                cts = decode_cipher_vector(msg.blobs["c"])
                plain = [decrypt(ct, sk, pk) for ct in cts]
                comm.send(Message(METHOD_MASKED_GRAD, me, msg.sender,
                                  blobs={"m": encode_encoded_vector(plain)}))
    return ProtocolResult(None, {}, comm.transcript)


# ---------------------------------------------------------------------------
# split one-hidden-layer network

def _split_master(comm, dataset, row_index: RowIndex, config: TrainConfig,
                  sink: MetricsSink | None) -> ProtocolResult:
    me = comm.my_id
    members = comm.members()
    h = config.hidden_size
    x = _aligned(dataset, row_index)
    y = select_rows(dataset.labels, row_index.positions())
    rng = substream(config.seed, "init", str(me))
    embed = MemberMLP.init(x.cols, h, rng) if x.cols > 0 else None
    n_blocks = len(members) + (1 if embed is not None else 0)
    head = MasterHead.init(h * n_blocks, rng)
    n = len(row_index.shared_order)
    final_loss = None
    for epoch in range(config.epochs):
        total = 0.0
        batches = _epoch_batches(n, config, epoch)
        for idx in batches:
            comm.broadcast(
                Message(METHOD_BATCH, me, me, blobs={"idx": encode_indices(idx)}),
                members,
            )
            xb = select_rows(x, idx)
            yb = select_rows(y, idx)
            gathered = comm.gather(members, METHOD_ACTIVATIONS)
            parts = [m.tensors["a"] for m in gathered]
            if embed is not None:
                parts.append(embed.forward(xb))
            z = head.forward(concat_cols(parts))
            d_z = Tensor(len(idx), 1,
                         tuple(sigmoid(zi) - yi for zi, yi in zip(z.data, yb.data)))
            total += sum(softplus(zi) - yi * zi
                         for zi, yi in zip(z.data, yb.data)) / len(idx)
            d_acts = head.backward(d_z, config.learning_rate, len(idx))
            for k, msg in enumerate(gathered):
                comm.send(Message(METHOD_ACT_GRAD, me, msg.sender,
                                  tensors={"g": _slice_cols(d_acts, k * h, (k + 1) * h)}))
            if embed is not None:
                own = _slice_cols(d_acts, len(members) * h, n_blocks * h)
                embed.backward(own, config.learning_rate, len(idx))
        final_loss = total / len(batches)
        if _eval_due(epoch, config):
            _eval_master_split(comm, config, x, y, embed, head, epoch + 1, sink)
    blocks = {"w2": head.w2, "b2": head.b2}
    if embed is not None:
        blocks["w1"] = embed.w1
        blocks["b1"] = embed.b1
    return ProtocolResult(final_loss, blocks, comm.transcript)


def _split_member(comm, dataset, row_index: RowIndex, config: TrainConfig,
                  sink: MetricsSink | None) -> ProtocolResult:
    me = comm.my_id
    x = _aligned(dataset, row_index)
    block = MemberMLP.init(x.cols, config.hidden_size,
                           substream(config.seed, "init", str(me)))
    n = len(row_index.shared_order)
    for epoch in range(config.epochs):
        for _ in range(batch_count(n, config.batch_size)):
            idx = decode_indices(comm.recv(MASTER, METHOD_BATCH).blobs["idx"])
            xb = select_rows(x, idx)
            comm.send(Message(METHOD_ACTIVATIONS, me, MASTER,
                              tensors={"a": block.forward(xb)}))
            g = comm.recv(MASTER, METHOD_ACT_GRAD).tensors["g"]
            block.backward(g, config.learning_rate, len(idx))
        if _eval_due(epoch, config):
            comm.send(Message(METHOD_EVAL, me, MASTER,
                              tensors={"u": block.forward(x)}))
    return ProtocolResult(None, {"w1": block.w1, "b1": block.b1}, comm.transcript)


def _eval_master_split(comm, config: TrainConfig, x: Tensor, y: Tensor,
                       embed: MemberMLP | None, head: MasterHead,
                       epoch_no: int, sink: MetricsSink | None) -> dict:
    gathered = comm.gather(comm.members(), METHOD_EVAL)
    parts = [m.tensors["u"] for m in gathered]
    if embed is not None:
        parts.append(embed.forward(x))
    z = head.forward(concat_cols(parts))
    metrics = compute_metrics(config.protocol, z.data, y.data)
    _log_eval(sink, comm.my_id, epoch_no, metrics)
    return metrics


def run_split_mlp(comm, dataset, row_index: RowIndex, config: TrainConfig,
                  sink: MetricsSink | None = None) -> ProtocolResult:
    if comm.my_id.role == "master":
        return _split_master(comm, dataset, row_index, config, sink)
    return _split_member(comm, dataset, row_index, config, sink)


_RUNNERS = {
    "linreg": run_linreg,
    "logreg": run_logreg,
    "he_logreg": run_he_logreg,
    "split_mlp": run_split_mlp,
}


def run_party(comm, dataset, config: TrainConfig,
              sink: MetricsSink | None = None) -> ProtocolResult:
    """Full per-party flow: record matching, then the configured protocol.

    `dataset` is None for the arbiter, which holds no rows and only learns
    the shared count (to pace its decrypt rounds) from the broadcast.
    """
    from .matching import RecordIdList, recv_shared_order, run_matching

    if comm.my_id.role == "arbiter":
        shared = recv_shared_order(comm)
        return run_arbiter(comm, config, len(shared), sink)
    ids = RecordIdList(str(comm.my_id), dataset.ids)
    row_index = run_matching(comm, ids, sink)
    return _RUNNERS[config.protocol](comm, dataset, row_index, config, sink)
