"""Transformer encoder-decoder with named parameter groups.

Parameters are keyed "group/..." where group is one of src_embed, encoder,
tgt_embed, decoder, output_proj; transfer surgery and freezing operate on
those groups. The variant is pre-norm (final norm after each stack) with
learned positional embeddings, which puts encoder-side positional parameters
inside the src_embed group where freezing expects them.

An optional d x d adapter matrix can be applied position-wise to the encoder
output, after the final encoder norm, as the last step before cross-attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .bpe import Vocabulary
from .data import Batch


class ModelError(Exception):
    pass


@dataclass
class ModelConfig:
    layers: int = 2
    model_dim: int = 128
    ff_dim: int = 256
    heads: int = 4
    dropout: float = 0.1
    max_len: int = 64
    label_smoothing: float = 0.1
    tied_output_embedding: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ModelError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )

    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def paper_scale(cls) -> "ModelConfig":
        return cls(layers=6, model_dim=512, ff_dim=2048, heads=8)


def _uniform(rng, shape, a, dtype):
    return rng.uniform(-a, a, size=shape).astype(dtype)


def init_params(
    config: ModelConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary, seed: int
) -> "Seq2SeqModel":
    """Deterministic seeded init.

    Embedding and positional tables draw from U(-a, a) with
    a = sqrt(3)/(2 sqrt(d)), i.e. std 0.5/sqrt(d); the forward pass scales
    their sum by sqrt(d). Projection matrices use Xavier-uniform
    sqrt(6/(fan_in+fan_out)); norms start at gain 1, bias 0. The small
    embedding scale keeps initial tied-output logits near zero, so an
    untrained model's loss starts near log(vocab).
    """
    d, ff = config.model_dim, config.ff_dim
    dt = config.np_dtype()
    rng = np.random.default_rng(seed)
    emb_a = math.sqrt(3.0) * 0.5 / math.sqrt(d)

    params: dict[str, T.Tensor] = {}

    def add(name, arr):
        params[name] = T.Tensor(arr, requires_grad=True, dtype=dt)

    def add_linear(name, fan_in, fan_out):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        add(f"{name}/w", _uniform(rng, (fan_in, fan_out), a, dt))
        add(f"{name}/b", np.zeros(fan_out, dtype=dt))

    def add_norm(name):
        add(f"{name}/gain", np.ones(d, dtype=dt))
        add(f"{name}/bias", np.zeros(d, dtype=dt))

    add("src_embed/tok", _uniform(rng, (len(src_vocab), d), emb_a, dt))
    add("src_embed/pos", _uniform(rng, (config.max_len, d), emb_a, dt))
    for i in range(config.layers):
        p = f"encoder/l{i}"
        add_norm(f"{p}/attn_norm")
        for proj in ("wq", "wk", "wv", "wo"):
            add_linear(f"{p}/attn/{proj}", d, d)
        add_norm(f"{p}/ff_norm")
        add_linear(f"{p}/ff/w1", d, ff)
        add_linear(f"{p}/ff/w2", ff, d)
    add_norm("encoder/final_norm")

    add("tgt_embed/tok", _uniform(rng, (len(tgt_vocab), d), emb_a, dt))
    add("tgt_embed/pos", _uniform(rng, (config.max_len, d), emb_a, dt))
    for i in range(config.layers):
        p = f"decoder/l{i}"
        add_norm(f"{p}/self_norm")
        for proj in ("wq", "wk", "wv", "wo"):
            add_linear(f"{p}/self_attn/{proj}", d, d)
        add_norm(f"{p}/cross_norm")
        for proj in ("wq", "wk", "wv", "wo"):
            add_linear(f"{p}/cross_attn/{proj}", d, d)
        add_norm(f"{p}/ff_norm")
        add_linear(f"{p}/ff/w1", d, ff)
        add_linear(f"{p}/ff/w2", ff, d)
    add_norm("decoder/final_norm")

    if not config.tied_output_embedding:
        a = math.sqrt(6.0 / (d + len(tgt_vocab)))
        add("output_proj/w", _uniform(rng, (d, len(tgt_vocab)), a, dt))

    return Seq2SeqModel(config, src_vocab, tgt_vocab, params)


PARAM_GROUPS = ("src_embed", "encoder", "tgt_embed", "decoder", "output_proj")


def group_of(param_name: str) -> str:
    g = param_name.split("/", 1)[0]
    if g not in PARAM_GROUPS:
        raise ModelError(f"parameter {param_name} has unknown group {g}")
    return g


class Seq2SeqModel:
    """One encoder-decoder with its vocabularies and named parameters."""

    def __init__(
        self,
        config: ModelConfig,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        params: dict,
    ):
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.params = params
        self._train_mode = False
        self._rng = np.random.default_rng(0)

    # -- bookkeeping --------------------------------------------------------

    def param_names(self, group: str | None = None) -> list:
        names = sorted(self.params)
        if group is None:
            return names
        return [n for n in names if group_of(n) == group]

    def group_names(self) -> list:
        return sorted({group_of(n) for n in self.params})

    def frozen_param_names(self, frozen_groups) -> set:
        groups = set(frozen_groups)
        unknown = groups - set(PARAM_GROUPS)
        if unknown:
            raise ModelError(f"unknown parameter groups: {sorted(unknown)}")
        return {n for n in self.params if group_of(n) in groups}

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def set_train(self, mode: bool, rng: np.random.Generator | None = None):
        self._train_mode = mode
        if rng is not None:
            self._rng = rng

    # -- building blocks ----------------------------------------------------

    def _p(self, name) -> T.Tensor:
        return self.params[name]

    def _dropout(self, x: T.Tensor) -> T.Tensor:
        p = self.config.dropout
        if not self._train_mode or p <= 0.0:
            return x
        draw = self._rng.random(x.shape, dtype=np.float32)
        mask = (draw >= p).astype(x.data.dtype)
        mask *= 1.0 / (1.0 - p)
        return T.mul(x, T.Tensor(mask, dtype=x.data.dtype))

    def _embed(self, ids: np.ndarray, side: str) -> T.Tensor:
        b, length = ids.shape
        if length > self.config.max_len:
            raise ModelError(
                f"sequence length {length} exceeds max_len {self.config.max_len}"
            )
        tok = T.embedding(self._p(f"{side}/tok"), ids)
        pos_ids = np.broadcast_to(np.arange(length), (b, length))
        pos = T.embedding(self._p(f"{side}/pos"), pos_ids)
        x = T.scale(T.add(tok, pos), math.sqrt(self.config.model_dim))
        return self._dropout(x)

    def _split_heads(self, x: T.Tensor, b: int, length: int) -> T.Tensor:
        h = self.config.heads
        dh = self.config.model_dim // h
        return T.transpose(T.reshape(x, (b, length, h, dh)), (0, 2, 1, 3))

    def _attention(self, prefix, q_in, kv_in, b, lq, lkv, mask):
        """Multi-head attention; mask is a bool (b, h, lq, lkv) array, True = blocked."""
        d = self.config.model_dim
        dh = d // self.config.heads
        q = self._split_heads(T.affine(q_in, self._p(f"{prefix}/wq/w"), self._p(f"{prefix}/wq/b")), b, lq)
        k = self._split_heads(T.affine(kv_in, self._p(f"{prefix}/wk/w"), self._p(f"{prefix}/wk/b")), b, lkv)
        v = self._split_heads(T.affine(kv_in, self._p(f"{prefix}/wv/w"), self._p(f"{prefix}/wv/b")), b, lkv)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        if mask is not None:
            scores = T.masked_fill(scores, mask, -1e9)
        attn = T.softmax(scores)
        ctx = T.matmul(attn, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b * lq, d))
        return T.affine(ctx, self._p(f"{prefix}/wo/w"), self._p(f"{prefix}/wo/b"))

    def _norm(self, name, x):
        return T.layer_norm(x, self._p(f"{name}/gain"), self._p(f"{name}/bias"))

    def _ff(self, prefix, x2d):
        h = T.relu(T.affine(x2d, self._p(f"{prefix}/w1/w"), self._p(f"{prefix}/w1/b")))
        return T.affine(h, self._p(f"{prefix}/w2/w"), self._p(f"{prefix}/w2/b"))

    # -- encoder / decoder --------------------------------------------------

    def encode(self, src_ids: np.ndarray, adapter=None) -> T.Tensor:
        """Encoder states (B, Ls, d); adapter (if given) is applied position-wise."""
        src_ids = np.asarray(src_ids)
        if src_ids.ndim != 2:
            raise ModelError(f"src ids must be (batch, length), got {src_ids.shape}")
        if src_ids.size and (src_ids.min() < 0 or src_ids.max() >= len(self.src_vocab)):
            raise ModelError("source id out of vocabulary range")
        b, ls = src_ids.shape
        d = self.config.model_dim
        pad = src_ids == self.src_vocab.pad_id
        mask = np.broadcast_to(pad[:, None, None, :], (b, self.config.heads, ls, ls))
        x = self._embed(src_ids, "src_embed")
        for i in range(self.config.layers):
            p = f"encoder/l{i}"
            h = T.reshape(self._norm(f"{p}/attn_norm", x), (b * ls, d))
            a = self._attention(f"{p}/attn", h, h, b, ls, ls, mask)
            x = T.add(x, self._dropout(T.reshape(a, (b, ls, d))))
            h = T.reshape(self._norm(f"{p}/ff_norm", x), (b * ls, d))
            f = self._ff(f"{p}/ff", h)
            x = T.add(x, self._dropout(T.reshape(f, (b, ls, d))))
        x = self._norm("encoder/final_norm", x)
        if adapter is not None:
            m = adapter.as_tensor(x.data.dtype)
            if m.shape != (d, d):
                raise ModelError(f"adapter shape {m.shape} does not match d={d}")
            x = T.reshape(T.matmul(T.reshape(x, (b * ls, d)), T.transpose(m)), (b, ls, d))
        return x

    def decode_states(self, tgt_in_ids: np.ndarray, memory: T.Tensor, src_ids: np.ndarray) -> T.Tensor:
        tgt_in_ids = np.asarray(tgt_in_ids)
        if tgt_in_ids.size and (
            tgt_in_ids.min() < 0 or tgt_in_ids.max() >= len(self.tgt_vocab)
        ):
            raise ModelError("target id out of vocabulary range")
        b, lt = tgt_in_ids.shape
        ls = memory.shape[1]
        d = self.config.model_dim
        h_ = self.config.heads
        causal = np.triu(np.ones((lt, lt), dtype=bool), k=1)
        self_mask = np.broadcast_to(causal[None, None, :, :], (b, h_, lt, lt))
        src_pad = np.asarray(src_ids) == self.src_vocab.pad_id
        cross_mask = np.broadcast_to(src_pad[:, None, None, :], (b, h_, lt, ls))
        mem2d = T.reshape(memory, (b * ls, d))

        x = self._embed(tgt_in_ids, "tgt_embed")
        for i in range(self.config.layers):
            p = f"decoder/l{i}"
            h = T.reshape(self._norm(f"{p}/self_norm", x), (b * lt, d))
            a = self._attention(f"{p}/self_attn", h, h, b, lt, lt, self_mask)
            x = T.add(x, self._dropout(T.reshape(a, (b, lt, d))))
            h = T.reshape(self._norm(f"{p}/cross_norm", x), (b * lt, d))
            a = self._attention(f"{p}/cross_attn", h, mem2d, b, lt, ls, cross_mask)
            x = T.add(x, self._dropout(T.reshape(a, (b, lt, d))))
            h = T.reshape(self._norm(f"{p}/ff_norm", x), (b * lt, d))
            f = self._ff(f"{p}/ff", h)
            x = T.add(x, self._dropout(T.reshape(f, (b, lt, d))))
        return self._norm("decoder/final_norm", x)

    def output_logits(self, dec_states: T.Tensor) -> T.Tensor:
        b, lt, d = dec_states.shape
        flat = T.reshape(dec_states, (b * lt, d))
        if self.config.tied_output_embedding:
            logits = T.matmul(flat, T.transpose(self._p("tgt_embed/tok")))
        else:
            logits = T.matmul(flat, self._p("output_proj/w"))
        return logits  # (b * lt, V)

    def decoder_input(self, tgt_ids: np.ndarray) -> np.ndarray:
        dec_in = np.full_like(tgt_ids, self.tgt_vocab.pad_id)
        dec_in[:, 0] = self.tgt_vocab.bos_id
        dec_in[:, 1:] = tgt_ids[:, :-1]
        return dec_in

    def forward_loss(self, batch: Batch, adapter=None) -> T.Tensor:
        """Label-smoothed mean per-token cross-entropy; padding masked out."""
        tgt = batch.tgt
        weights = (tgt != self.tgt_vocab.pad_id).astype(np.float64).ravel()
        if weights.sum() == 0:
            raise ModelError("batch has an all-padding target")
        memory = self.encode(batch.src, adapter=adapter)
        states = self.decode_states(self.decoder_input(tgt), memory, batch.src)
        logits = self.output_logits(states)
        loss = T.cross_entropy_logits(
            logits, tgt.ravel(), weights, label_smoothing=self.config.label_smoothing
        )
        if not np.isfinite(loss.data):
            raise ModelError("non-finite training loss")
        return loss

    def token_logprobs(self, batch: Batch, adapter=None) -> tuple:
        """(logprob of each reference token, pad mask) without tape recording."""
        with T.no_grad():
            memory = self.encode(batch.src, adapter=adapter)
            states = self.decode_states(self.decoder_input(batch.tgt), memory, batch.src)
            logits = self.output_logits(states).data
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        flat_tgt = batch.tgt.ravel()
        tok_lp = logp[np.arange(flat_tgt.size), flat_tgt].reshape(batch.tgt.shape)
        return tok_lp, batch.tgt != self.tgt_vocab.pad_id

    def per_sentence_loss(self, batch: Batch, adapter=None) -> np.ndarray:
        """Mean negative log-likelihood per sentence (no smoothing, no grad)."""
        tok_lp, mask = self.token_logprobs(batch, adapter=adapter)
        counts = mask.sum(axis=1)
        if (counts == 0).any():
            raise ModelError("batch has an all-padding target")
        return -(tok_lp * mask).sum(axis=1) / counts

    def step_logits(self, prefix_ids: np.ndarray, memory: T.Tensor, src_ids: np.ndarray) -> np.ndarray:
        """Next-token logits (B, V) for decoding; no tape recording."""
        with T.no_grad():
            states = self.decode_states(prefix_ids, memory, src_ids)
            logits = self.output_logits(states).data
        b, lt = prefix_ids.shape
        return logits.reshape(b, lt, -1)[:, -1, :]

    # -- surgery helpers ----------------------------------------------------

    def clone_params(self) -> dict:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_param_arrays(self, arrays: dict):
        if set(arrays) != set(self.params):
            missing = set(self.params) ^ set(arrays)
            raise ModelError(f"parameter name mismatch: {sorted(missing)[:4]}...")
        for n, arr in arrays.items():
            if arr.shape != self.params[n].data.shape:
                raise ModelError(
                    f"shape mismatch for {n}: {arr.shape} vs {self.params[n].data.shape}"
                )
            self.params[n].data = arr.astype(self.params[n].data.dtype, copy=True)
