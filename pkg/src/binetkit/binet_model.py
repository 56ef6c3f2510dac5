"""Recurrent next-event prediction models and their anomaly score tensors.

Three wirings of the same sequence-to-sequence skeleton. Every attribute of
the log gets its own embedding table and encoder GRU; the batch-normalized
encoder outputs of all attributes are concatenated and fed to one decoder
GRU per attribute, whose states are batch normalized again before the
softmax head that predicts that attribute of the *next* event. The versions
differ in what else the decoders may see about the next event:

* version 1: decoders see the encoder concatenation only.
* version 2: every non-activity decoder additionally receives the embedded
  next activity; the activity decoder itself is unchanged.
* version 3: every decoder receives the embeddings of all next-event
  attributes except the one it predicts.

Training is teacher-forced: for position t the inputs are events 0..t (with
a begin-of-sequence marker at position 0) and the targets are the attributes
of event t+1. The anomaly score of an observed attribute value is the
probability mass the model put on values it considered strictly more likely.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .event_log import (
    PAD,
    BOS,
    Case,
    EncodedLog,
    SchemaError,
    VocabularyError,
    atomic_write_bytes,
    valid_mask,
)
from .neural_core import (
    Adam,
    BatchNorm,
    Dense,
    Embedding,
    GruCell,
    clip_global_norm,
    embedding_dim,
    masked_cross_entropy,
    softmax,
    softmax_backward,
)
from .thresholding import scores_from_distributions

MAGIC = b"BINETKIT"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class BinetConfig:
    version: int = 1
    hidden_dim: int | None = None  # default: 2 * max original case length
    batch_size: int = 500
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.version not in (1, 2, 3):
            raise ValueError(f"version must be 1, 2 or 3, got {self.version}")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")


class BinetModel:
    """Parameter container plus forward/backward machinery."""

    def __init__(self, config: BinetConfig, schema: list[str],
                 decoders: list[list[str]], hidden_dim: int,
                 rng: np.random.Generator):
        if not schema or len(schema) != len(decoders):
            raise SchemaError("schema and dictionaries must align and be nonempty")
        self.config = config
        self.schema = list(schema)
        self.decoders = [list(d) for d in decoders]
        self.encoders = [
            {sym: code for code, sym in enumerate(d) if code >= 2} for d in self.decoders
        ]
        self.hidden_dim = hidden_dim
        A = len(schema)
        self.emb_dims = [embedding_dim(len(d) - 2) for d in self.decoders]
        self.embeddings = []
        self.enc_cells = []
        self.enc_norms = []
        self.dec_cells = []
        self.dec_norms = []
        self.heads = []
        for k in range(A):
            vocab = len(self.decoders[k])
            self.embeddings.append(Embedding(vocab, self.emb_dims[k], rng))
            self.enc_cells.append(GruCell(self.emb_dims[k], hidden_dim, rng))
            self.enc_norms.append(BatchNorm(hidden_dim))
            side = sum(self.emb_dims[b] for b in self.side_attributes(k))
            self.dec_cells.append(GruCell(A * hidden_dim + side, hidden_dim, rng))
            self.dec_norms.append(BatchNorm(hidden_dim))
            self.heads.append(Dense(hidden_dim, vocab, rng))

    @property
    def num_attributes(self) -> int:
        return len(self.schema)

    def side_attributes(self, k: int) -> tuple[int, ...]:
        """Indices of next-event attributes fed to decoder k."""
        if self.config.version == 1:
            return ()
        if self.config.version == 2:
            return (0,) if k != 0 else ()
        return tuple(b for b in range(self.num_attributes) if b != k)

    # ------------------------------------------------------------ parameters

    def _layers(self):
        for k in range(self.num_attributes):
            yield f"emb{k}", self.embeddings[k]
            yield f"enc{k}", self.enc_cells[k]
            yield f"encbn{k}", self.enc_norms[k]
            yield f"dec{k}", self.dec_cells[k]
            yield f"decbn{k}", self.dec_norms[k]
            yield f"head{k}", self.heads[k]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self._layers():
            for name, arr in layer.params().items():
                out[f"{prefix}.{name}"] = arr
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self._layers():
            for name, arr in layer.grads().items():
                out[f"{prefix}.{name}"] = arr
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Everything that must persist: parameters plus running statistics."""
        out = self.params()
        for k in range(self.num_attributes):
            out[f"encbn{k}.running_mean"] = self.enc_norms[k].running_mean
            out[f"encbn{k}.running_var"] = self.enc_norms[k].running_var
            out[f"decbn{k}.running_mean"] = self.dec_norms[k].running_mean
            out[f"decbn{k}.running_var"] = self.dec_norms[k].running_var
        return out

    def zero_grads(self):
        for _, layer in self._layers():
            layer.zero_grads()

    def reset_caches(self):
        for _, layer in self._layers():
            layer.reset()

    # ------------------------------------------------------------ forward

    def check_compatible(self, enc: EncodedLog):
        if list(enc.schema) != self.schema:
            raise SchemaError(
                f"log schema {enc.schema} does not match model schema {self.schema}"
            )
        if [list(d) for d in enc.decoders] != self.decoders:
            raise VocabularyError("log dictionaries differ from the model's snapshot")

    def forward(self, enc_codes: np.ndarray, next_codes: np.ndarray,
                training: bool) -> list[np.ndarray]:
        """One pass over a batch.

        enc_codes: (B, T, A) inputs, position 0 is the BOS marker.
        next_codes: (B, T, A) attributes of the following event (used by
        versions 2 and 3 only); PAD rows mean "next event unknown".
        Returns per-attribute probability tensors (B, T, vocab).
        """
        B, T, A = enc_codes.shape
        H = self.hidden_dim
        enc_valid = enc_codes[:, :, 0] != PAD
        normalized = []
        for k in range(A):
            emb = self.embeddings[k].forward(enc_codes[:, :, k])
            h = np.zeros((B, H))
            states = np.empty((B, T, H))
            for t in range(T):
                h = self.enc_cells[k].step(emb[:, t], h)
                states[:, t] = h
            normalized.append(self.enc_norms[k].forward(states, enc_valid, training))
        context = np.concatenate(normalized, axis=-1)

        probs = []
        for k in range(A):
            side = [self.embeddings[b].forward(next_codes[:, :, b])
                    for b in self.side_attributes(k)]
            dec_in = np.concatenate([context] + side, axis=-1) if side else context
            h = np.zeros((B, H))
            states = np.empty((B, T, H))
            for t in range(T):
                h = self.dec_cells[k].step(dec_in[:, t], h)
                states[:, t] = h
            head_in = self.dec_norms[k].forward(states, enc_valid, training)
            logits = self.heads[k].forward(head_in)
            probs.append(softmax(logits))
        return probs

    def backward(self, probs: list[np.ndarray], dprobs: list[np.ndarray]) -> None:
        """Accumulate gradients; call in matching pairs with forward()."""
        B, T, _ = probs[0].shape
        H = self.hidden_dim
        A = self.num_attributes
        dcontext = np.zeros((B, T, A * H))
        for k in range(A - 1, -1, -1):
            dlogits = softmax_backward(probs[k], dprobs[k])
            dhead_in = self.heads[k].backward(dlogits)
            dstates = self.dec_norms[k].backward(dhead_in)
            carry = np.zeros((B, H))
            width = self.dec_cells[k].W.shape[0]
            ddec_in = np.empty((B, T, width))
            for t in range(T - 1, -1, -1):
                dx, carry = self.dec_cells[k].backward_step(dstates[:, t] + carry)
                ddec_in[:, t] = dx
            dcontext += ddec_in[:, :, : A * H]
            sides = self.side_attributes(k)
            offsets = []
            pos = A * H
            for b in sides:
                offsets.append((b, pos, pos + self.emb_dims[b]))
                pos += self.emb_dims[b]
            for b, lo, hi in reversed(offsets):
                self.embeddings[b].backward(ddec_in[:, :, lo:hi])
        for k in range(A - 1, -1, -1):
            dstates = self.enc_norms[k].backward(dcontext[:, :, k * H : (k + 1) * H])
            carry = np.zeros((B, H))
            demb = np.empty((B, T, self.emb_dims[k]))
            for t in range(T - 1, -1, -1):
                dx, carry = self.enc_cells[k].backward_step(dstates[:, t] + carry)
                demb[:, t] = dx
            self.embeddings[k].backward(demb)


def build(schema: list[str], decoders: list[list[str]], config: BinetConfig,
          max_case_length: int | None = None) -> BinetModel:
    """Construct a model with freshly initialized parameters."""
    if not decoders or any(len(d) < 2 for d in decoders):
        raise SchemaError("dictionaries must be nonempty")
    hidden = config.hidden_dim
    if hidden is None:
        if max_case_length is None:
            raise SchemaError("need max_case_length to derive the default hidden size")
        hidden = 2 * max_case_length
    rng = np.random.default_rng(config.seed)
    return BinetModel(config, schema, decoders, hidden, rng)


def build_for_log(enc: EncodedLog, config: BinetConfig) -> BinetModel:
    return build(list(enc.schema), enc.decoders, config,
                 max_case_length=enc.features.shape[1] - 1)


def train(model: BinetModel, enc: EncodedLog) -> list[float]:
    """Teacher-forced training; returns the loss after every update."""
    model.check_compatible(enc)
    feats = enc.features
    C = feats.shape[0]
    if C == 0:
        raise SchemaError("cannot train on an empty log")
    cfg = model.config
    lengths = enc.case_lengths
    optimizer = Adam(model.params())
    rng = np.random.default_rng(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(C)
        for start in range(0, C, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            T = int(lengths[batch].max())  # longest case in the batch
            rows = feats[batch][:, : T + 1, :]
            enc_codes = rows[:, :-1, :]
            targets = rows[:, 1:, :]
            model.zero_grads()
            probs = model.forward(enc_codes, targets, training=True)
            loss = 0.0
            dprobs = []
            for k in range(model.num_attributes):
                vocab = probs[k].shape[-1]
                step_loss, dp = masked_cross_entropy(
                    probs[k].reshape(-1, vocab), targets[:, :, k].reshape(-1)
                )
                loss += step_loss
                dprobs.append(dp.reshape(probs[k].shape))
            model.backward(probs, dprobs)
            model.reset_caches()
            clip_global_norm(model.grads())
            optimizer.step(model.grads())
            history.append(loss)
    return history


def predict_log(model: BinetModel, enc: EncodedLog) -> list[np.ndarray]:
    """Per-attribute next-attribute distributions, (C, E-1, vocab) each.

    Position j holds the prediction for original event j. Rows beyond a
    case's length are zero-filled.
    """
    model.check_compatible(enc)
    feats = enc.features
    C, E, A = feats.shape
    out = [np.zeros((C, E - 1, len(d))) for d in model.decoders]
    step = model.config.batch_size
    lengths = enc.case_lengths
    for start in range(0, C, step):
        batch = slice(start, min(start + step, C))
        T = int(lengths[batch].max())
        rows = feats[batch, : T + 1, :]
        probs = model.forward(rows[:, :-1, :], rows[:, 1:, :], training=False)
        model.reset_caches()
        for k in range(A):
            out[k][batch, :T] = probs[k]
    return out


def score_log(model: BinetModel, enc: EncodedLog) -> np.ndarray:
    """Anomaly score tensor (C, E-1, A); padding slots are exactly 0."""
    probs = predict_log(model, enc)
    feats = enc.features
    C, E, A = feats.shape
    scores = np.zeros((C, E - 1, A))
    mask = valid_mask(enc.case_lengths, E - 1)
    for k in range(A):
        observed = feats[:, 1:, k]
        s = scores_from_distributions(probs[k], observed)
        scores[:, :, k] = np.where(mask, s, 0.0)
    return scores


def encode_prefix(model: BinetModel, events) -> np.ndarray:
    """Encode a case prefix to a (1, T, A) tensor with the BOS marker first."""
    if isinstance(events, Case):
        events = events.events
    T = len(events) + 1
    A = model.num_attributes
    codes = np.zeros((1, T, A), dtype=np.int64)
    codes[0, 0, :] = BOS
    for j, event in enumerate(events, start=1):
        for k, name in enumerate(model.schema):
            symbol = event.value(name)
            code = model.encoders[k].get(symbol)
            if code is None:
                raise VocabularyError(f"unknown {name} symbol {symbol!r}")
            codes[0, j, k] = code
    return codes


def predict(model: BinetModel, events) -> dict[str, np.ndarray]:
    """Distributions over the attributes of the event following the prefix."""
    codes = encode_prefix(model, events)
    next_codes = np.zeros_like(codes)
    next_codes[:, :-1, :] = codes[:, 1:, :]  # last step: next event unknown
    probs = model.forward(codes, next_codes, training=False)
    model.reset_caches()
    return {name: probs[k][0, -1] for k, name in enumerate(model.schema)}


# ---------------------------------------------------------------- persistence

def save_model(model: BinetModel, path: str) -> None:
    arrays = model.state_arrays()
    header = {
        "array_order": [[name, list(arrays[name].shape)] for name in arrays],
        "batch_size": model.config.batch_size,
        "binet_version": model.config.version,
        "decoders": model.decoders,
        "epochs": model.config.epochs,
        "hidden_dim": model.hidden_dim,
        "schema": model.schema,
        "seed": model.config.seed,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob]
    for name in arrays:
        parts.append(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_model(path: str) -> BinetModel:
    with open(path, "rb") as handle:
        data = handle.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    offset = len(MAGIC)
    fmt, header_len = struct.unpack_from("<II", data, offset)
    offset += 8
    if fmt != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {fmt}")
    try:
        header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    except ValueError as exc:
        raise ModelFormatError(f"corrupt header: {exc}") from None
    offset += header_len
    config = BinetConfig(
        version=header["binet_version"],
        hidden_dim=header["hidden_dim"],
        batch_size=header["batch_size"],
        epochs=header["epochs"],
        seed=header["seed"],
    )
    model = build(header["schema"], header["decoders"], config)
    arrays = model.state_arrays()
    for name, shape in header["array_order"]:
        if name not in arrays:
            raise ModelFormatError(f"unexpected array {name!r}")
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        target = arrays[name]
        if list(target.shape) != list(shape):
            raise ModelFormatError(f"shape mismatch for {name!r}")
        target[...] = block.reshape(shape)
    if offset != len(data):
        raise ModelFormatError("trailing bytes after parameter blocks")
    return model
