"""Sequence encoders over a tied item-embedding table.

The model is deliberately plain: one [N x d] embedding table shared
between input and output, encoded by either a mean pool over the history
or a single-layer GRU, scored by inner product against (a subset of) the
same table. Histories are truncated to the most recent max_len items by
the callers; the encoders see already-truncated id lists.

Batched encoding left-pads to the longest history in the batch and
applies a 0/1 step mask to the state update, so padding never touches
the hidden state and the result is independent of batch composition.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint."""


ENCODER_KINDS = ("mean_pool", "gru")

# Declared parameter order; checkpoint blobs follow it exactly.
_GRU_FIELDS = ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")


@dataclass
class ModelParams:
    item_embeddings: Tensor
    encoder_kind: str
    gru: dict[str, Tensor] | None = None
    nce_offset: Tensor | None = None

    @property
    def item_count(self) -> int:
        return self.item_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.item_embeddings.shape[1]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("item_embeddings", self.item_embeddings)]
        if self.gru is not None:
            out += [(name, self.gru[name]) for name in _GRU_FIELDS]
        if self.nce_offset is not None:
            out.append(("nce_offset", self.nce_offset))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.parameters())


def init_params(item_count: int, dim: int, encoder_kind: str, seed: int,
                init: str = "normal", with_nce_offset: bool = False) -> ModelParams:
    """Fresh parameters; "normal" is N(0, 0.02^2), "xavier" is the uniform fan rule."""
    if encoder_kind not in ENCODER_KINDS:
        raise ValueError(f"unknown encoder {encoder_kind!r}")
    if init not in ("normal", "xavier"):
        raise ValueError(f"unknown init {init!r}")
    if item_count < 1 or dim < 1:
        raise ValueError("item_count and dim must be positive")
    rng = np.random.default_rng(seed)

    def draw(shape):
        if init == "normal":
            return rng.standard_normal(shape) * 0.02
        fan_in = shape[0] if len(shape) > 1 else shape[0]
        fan_out = shape[1] if len(shape) > 1 else shape[0]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    params = ModelParams(
        item_embeddings=Tensor(draw((item_count, dim)), requires_grad=True),
        encoder_kind=encoder_kind,
    )
    if encoder_kind == "gru":
        gru: dict[str, Tensor] = {}
        for name in _GRU_FIELDS:
            shape = (dim,) if name.startswith("b_") else (dim, dim)
            gru[name] = Tensor(draw(shape), requires_grad=True)
        params.gru = gru
    if with_nce_offset:
        params.nce_offset = Tensor(np.zeros(()), requires_grad=True)
    return params


def _pad(histories: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    # Left-pad with id 0; the mask keeps padded steps out of the state.
    if not histories:
        raise ValueError("need at least one history")
    longest = max(len(h) for h in histories)
    if longest == 0 or any(len(h) == 0 for h in histories):
        raise ValueError("histories must be non-empty")
    b = len(histories)
    ids = np.zeros((b, longest), dtype=np.int64)
    mask = np.zeros((b, longest), dtype=np.float64)
    for i, h in enumerate(histories):
        ids[i, longest - len(h):] = h
        mask[i, longest - len(h):] = 1.0
    return ids, mask


def encode_batch(params: ModelParams, histories: list[list[int]]) -> Tensor:
    """Encode a batch of histories to a [B x d] matrix of hidden states."""
    ids, mask = _pad(histories)
    b, steps = ids.shape
    d = params.dim
    emb = params.item_embeddings
    if params.encoder_kind == "mean_pool":
        # Masked mean: weight each real step by 1/len before summing.
        lengths = mask.sum(axis=1)
        acc: Tensor | None = None
        for t in range(steps):
            w = Tensor(np.repeat((mask[:, t] / lengths)[:, None], d, axis=1))
            term = ad.mul(ad.gather_rows(emb, ids[:, t]), w)
            acc = term if acc is None else ad.add(acc, term)
        return acc
    gru = params.gru
    h = Tensor(np.zeros((b, d)))
    for t in range(steps):
        x = ad.gather_rows(emb, ids[:, t])
        z = ad.sigmoid(ad.add_bias(ad.add(ad.matmul(x, gru["w_z"]), ad.matmul(h, gru["u_z"])), gru["b_z"]))
        r = ad.sigmoid(ad.add_bias(ad.add(ad.matmul(x, gru["w_r"]), ad.matmul(h, gru["u_r"])), gru["b_r"]))
        cand = ad.tanh(ad.add_bias(ad.add(ad.matmul(x, gru["w_h"]), ad.matmul(ad.mul(r, h), gru["u_h"])), gru["b_h"]))
        h_new = ad.add(ad.mul(ad.sub(1.0, z), h), ad.mul(z, cand))
        m = Tensor(np.repeat(mask[:, t][:, None], d, axis=1))
        h = ad.add(ad.mul(m, h_new), ad.mul(Tensor(1.0 - m.data), h))
    return h


def encode(params: ModelParams, history: list[int]) -> Tensor:
    """Encode one history to a length-d hidden vector."""
    return ad.reshape(encode_batch(params, [history]), (params.dim,))


def score_all(params: ModelParams, hidden: Tensor) -> Tensor:
    """Inner products of one length-d hidden vector against every item."""
    if hidden.data.ndim != 1 or hidden.shape[0] != params.dim:
        raise ad.ShapeError(f"hidden must be a length-{params.dim} vector, got {hidden.shape}")
    row = ad.reshape(hidden, (1, params.dim))
    return ad.reshape(ad.matmul_t(row, params.item_embeddings), (params.item_count,))


def score_subset(params: ModelParams, hidden: Tensor, ids) -> Tensor:
    """Inner products against selected items only; duplicates allowed."""
    if hidden.data.ndim != 1 or hidden.shape[0] != params.dim:
        raise ad.ShapeError(f"hidden must be a length-{params.dim} vector, got {hidden.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    rows = ad.gather_rows(params.item_embeddings, ids)
    row = ad.reshape(hidden, (1, params.dim))
    return ad.reshape(ad.matmul_t(row, rows), (ids.size,))


def score_all_batch(params: ModelParams, hidden: Tensor) -> Tensor:
    """[B x d] hidden states against the whole table: [B x N] scores."""
    return ad.matmul_t(hidden, params.item_embeddings)


def score_subset_batch(params: ModelParams, hidden: Tensor, id_matrix: np.ndarray) -> Tensor:
    """Per-row subsets: scores[i, j] = <hidden[i], emb[id_matrix[i, j]]>."""
    id_matrix = np.asarray(id_matrix, dtype=np.int64)
    b, c = id_matrix.shape
    rows = ad.gather_rows(params.item_embeddings, id_matrix.reshape(-1))
    rep = ad.gather_rows(hidden, np.repeat(np.arange(b), c))
    return ad.reshape(ad.sum_rows(ad.mul(rows, rep)), (b, c))


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(params: ModelParams, path_prefix: str, seed: int,
                    config: dict | None = None) -> None:
    """Write <prefix>.json (header) and <prefix>.bin (little-endian float64).

    The blob concatenates the declared parameter order; the header holds
    enough shape information to rebuild the model exactly.
    """
    fields = [{"name": name, "shape": list(t.shape)} for name, t in params.named_parameters()]
    header = {
        "format": "ranklab-checkpoint-v1",
        "encoder": params.encoder_kind,
        "item_count": params.item_count,
        "dim": params.dim,
        "seed": seed,
        "config_hash": config_hash(config or {}),
        "fields": fields,
    }
    with open(path_prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(path_prefix + ".bin", "wb") as fh:
        for _, t in params.named_parameters():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path_prefix: str) -> tuple[ModelParams, dict]:
    with open(path_prefix + ".json", "r", encoding="utf-8") as fh:
        header = json.load(fh)
    if header.get("format") != "ranklab-checkpoint-v1":
        raise CheckpointError("unrecognized checkpoint format")
    with open(path_prefix + ".bin", "rb") as fh:
        blob = fh.read()
    expected = sum(int(np.prod(f["shape"], dtype=int)) for f in header["fields"])
    flat = np.frombuffer(blob, dtype="<f8")
    if flat.size != expected:
        raise CheckpointError(f"blob holds {flat.size} values, header declares {expected}")
    tensors: dict[str, Tensor] = {}
    pos = 0
    for f in header["fields"]:
        shape = tuple(int(s) for s in f["shape"])
        count = int(np.prod(shape, dtype=int)) if shape else 1
        tensors[f["name"]] = Tensor(flat[pos:pos + count].reshape(shape).copy(), requires_grad=True)
        pos += count
    params = ModelParams(
        item_embeddings=tensors["item_embeddings"],
        encoder_kind=header["encoder"],
    )
    if header["encoder"] == "gru":
        missing = [n for n in _GRU_FIELDS if n not in tensors]
        if missing:
            raise CheckpointError(f"checkpoint missing GRU fields {missing}")
        params.gru = {n: tensors[n] for n in _GRU_FIELDS}
    if "nce_offset" in tensors:
        params.nce_offset = tensors["nce_offset"]
    return params, header
