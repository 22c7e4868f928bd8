"""Embedding tables, token pooling, and the joint resume/job-description encoder.

The text matcher is a small cross-encoder trained from scratch: both documents
share one input sequence ([CLS] resume [SEP] description) so self-attention can
mix tokens across the pair, and the output is the final hidden state at the
[CLS] position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ValidationError
from .layers import LinearMap, normal_param, ones_param, zeros_param
from .tensor import Tensor
from .vocab import CLS_ID, PAD_ID, SEP_ID


class EmbeddingTable:
    """A lookup table of row vectors for words or entity ids."""

    KINDS = ("word", "job_id", "user_id")

    def __init__(self, kind: str, rows: int, dim: int, rng: np.random.Generator):
        if kind not in self.KINDS:
            raise ConfigError(f"unknown embedding kind {kind!r}")
        self.kind = kind
        self.table = normal_param(rng, rows, dim)

    @property
    def rows(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]


def embed_ids(ids: list[int], table: EmbeddingTable) -> Tensor:
    """Stack the table rows for ``ids``; gradients scatter-add back per row."""
    return T.gather_rows(table.table, ids)


def pool_tokens(token_ids: list[int], word_table: EmbeddingTable) -> Tensor:
    """Mean of the non-PAD token embeddings."""
    kept = [i for i in token_ids if i != PAD_ID]
    if not kept:
        raise ValidationError("pool_tokens: sequence empty after PAD removal")
    return T.mean_rows(T.gather_rows(word_table.table, kept))


@dataclass
class CrossEncoderConfig:
    layers: int = 2
    heads: int = 2
    d_w: int = 128
    ffn_width: int = 256
    max_tokens: int = 64

    def validate(self) -> None:
        if self.layers < 1 or self.heads < 1:
            raise ConfigError("cross encoder needs at least one layer and one head")
        if self.d_w % self.heads != 0:
            raise ConfigError(f"d_w={self.d_w} not divisible by heads={self.heads}")
        if self.max_tokens < 4:
            raise ConfigError("max_tokens must leave room for [CLS], [SEP] and both segments")


def truncate_pair(resume_ids: list[int], jd_ids: list[int], max_tokens: int) -> tuple[list[int], list[int]]:
    """Joint truncation to the token budget, keeping both segments represented.

    [CLS] and [SEP] always survive; the remaining budget is split between the
    segments in proportion to their lengths, each keeping at least one token.
    """
    budget = max_tokens - 2
    total = len(resume_ids) + len(jd_ids)
    if total <= budget:
        return list(resume_ids), list(jd_ids)
    r_keep = round(budget * len(resume_ids) / total)
    r_keep = min(max(r_keep, 1), budget - 1)
    return list(resume_ids[:r_keep]), list(jd_ids[: budget - r_keep])


class CrossEncoder:
    """Pre-norm transformer over the concatenated resume/description pair."""

    def __init__(self, cfg: CrossEncoderConfig, word_table: EmbeddingTable,
                 rng: np.random.Generator):
        cfg.validate()
        if word_table.dim != cfg.d_w:
            raise ConfigError(f"word table dim {word_table.dim} != encoder d_w {cfg.d_w}")
        self.cfg = cfg
        self.word_table = word_table
        d, h = cfg.d_w, cfg.heads
        self.head_dim = d // h
        self.pos_table = normal_param(rng, cfg.max_tokens, d)
        self.seg_table = normal_param(rng, 2, d)
        self.blocks = []
        for _ in range(cfg.layers):
            block = {
                "ln1_g": ones_param(d), "ln1_b": zeros_param(d),
                "wq": [normal_param(rng, d, self.head_dim) for _ in range(h)],
                "wk": [normal_param(rng, d, self.head_dim) for _ in range(h)],
                "wv": [normal_param(rng, d, self.head_dim) for _ in range(h)],
                "wo": normal_param(rng, d, d),
                "ln2_g": ones_param(d), "ln2_b": zeros_param(d),
                "ffn1": LinearMap(d, cfg.ffn_width, rng),
                "ffn2": LinearMap(cfg.ffn_width, d, rng),
            }
            self.blocks.append(block)
        self.final_ln_g = ones_param(d)
        self.final_ln_b = zeros_param(d)

    def named_params(self, prefix: str = "encoder"):
        yield f"{prefix}.pos", self.pos_table
        yield f"{prefix}.seg", self.seg_table
        for li, blk in enumerate(self.blocks):
            base = f"{prefix}.layer{li}"
            yield f"{base}.ln1_g", blk["ln1_g"]
            yield f"{base}.ln1_b", blk["ln1_b"]
            for hi in range(self.cfg.heads):
                yield f"{base}.wq{hi}", blk["wq"][hi]
                yield f"{base}.wk{hi}", blk["wk"][hi]
                yield f"{base}.wv{hi}", blk["wv"][hi]
            yield f"{base}.wo", blk["wo"]
            yield f"{base}.ln2_g", blk["ln2_g"]
            yield f"{base}.ln2_b", blk["ln2_b"]
            yield from blk["ffn1"].named_params(f"{base}.ffn1")
            yield from blk["ffn2"].named_params(f"{base}.ffn2")
        yield f"{prefix}.final_ln_g", self.final_ln_g
        yield f"{prefix}.final_ln_b", self.final_ln_b

    def encode(self, resume_ids: list[int], jd_ids: list[int],
               dropout_p: float = 0.0, rng: np.random.Generator | None = None,
               attn_sink: list | None = None) -> Tensor:
        """Return the final hidden vector at the [CLS] position.

        ``attn_sink``, when given, collects each layer/head attention matrix
        (post-softmax numpy arrays) for inspection.
        """
        if not resume_ids or not jd_ids:
            raise ValidationError("cross encoder needs non-empty resume and description")
        resume_ids, jd_ids = truncate_pair(resume_ids, jd_ids, self.cfg.max_tokens)
        ids = [CLS_ID] + resume_ids + [SEP_ID] + jd_ids
        n = len(ids)
        segments = [0] * (len(resume_ids) + 2) + [1] * len(jd_ids)

        x = T.gather_rows(self.word_table.table, ids)
        x = T.add(x, T.gather_rows(self.pos_table, list(range(n))))
        x = T.add(x, T.gather_rows(self.seg_table, segments))

        inv_sqrt_d = 1.0 / math.sqrt(self.head_dim)
        train = rng is not None and dropout_p > 0.0
        for blk in self.blocks:
            h = T.layer_norm(x, blk["ln1_g"], blk["ln1_b"])
            heads = []
            for hi in range(self.cfg.heads):
                q = T.matmul(h, blk["wq"][hi])
                k = T.matmul(h, blk["wk"][hi])
                v = T.matmul(h, blk["wv"][hi])
                scores = T.scale(T.matmul(q, T.transpose(k)), inv_sqrt_d)
                weights = T.softmax(scores, axis=1)
                if attn_sink is not None:
                    attn_sink.append(weights.values.copy())
                heads.append(T.matmul(weights, v))
            attn = T.matmul(T.concat(heads, axis=1), blk["wo"])
            if train:
                attn = T.dropout(attn, dropout_p, rng)
            x = T.add(x, attn)
            h2 = T.layer_norm(x, blk["ln2_g"], blk["ln2_b"])
            ffn = blk["ffn2"](T.relu(blk["ffn1"](h2)))
            if train:
                ffn = T.dropout(ffn, dropout_p, rng)
            x = T.add(x, ffn)
        x = T.layer_norm(x, self.final_ln_g, self.final_ln_b)
        return T.take_row(x, 0)


def encode_job_desc(jd_ids: list[int], word_table: EmbeddingTable,
                    projection: LinearMap) -> Tensor:
    """Mean-pooled description embedding projected into the ID-embedding space.

    Serves as the attention query against clustered query-text vectors, so it
    must land in the same low dimension as the ID embeddings.
    """
    return projection(pool_tokens(jd_ids, word_table))
