"""Intention clustering over search history and job-specific attention readout.

A user's history rows are softly assigned to k intention clusters by a learned
probability assignment matrix; a candidate job then attends over the clusters
to produce a job-specific intention vector. Two streams exist: one over the
clicked-job ID sequence, one over pooled query text (jointly clustered with the
ID sequence so its keys and values stay aligned).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import normal_param, zeros_param
from .tensor import Tensor

CLUSTER_AXIS_CHOICES = ("clusters", "history")


@dataclass
class MHAConfig:
    heads: int = 1
    model_dim: int = 16

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    def validate(self) -> None:
        if self.heads < 1:
            raise ConfigError(f"attention needs at least one head, got {self.heads}")
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim={self.model_dim} not divisible by heads={self.heads}"
            )


class AttentionParams:
    """Per-head projection matrices plus the output combiner for one MHA block."""

    def __init__(self, cfg: MHAConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        d, dd = cfg.model_dim, cfg.head_dim
        self.wq = [normal_param(rng, d, dd) for _ in range(cfg.heads)]
        self.wk = [normal_param(rng, d, dd) for _ in range(cfg.heads)]
        self.wv = [normal_param(rng, d, dd) for _ in range(cfg.heads)]
        self.wo = normal_param(rng, d, d)

    def named_params(self, prefix: str):
        for i in range(self.cfg.heads):
            yield f"{prefix}.wq{i}", self.wq[i]
            yield f"{prefix}.wk{i}", self.wk[i]
            yield f"{prefix}.wv{i}", self.wv[i]
        yield f"{prefix}.wo", self.wo


class ClusterParams:
    """Weights of one soft-assignment layer: logits = weight @ rows^T + bias."""

    def __init__(self, clusters: int, d_in: int, rng: np.random.Generator):
        if clusters <= 0:
            raise ConfigError(f"cluster count must be positive, got {clusters}")
        self.weight = normal_param(rng, clusters, d_in)
        self.bias = zeros_param(clusters)

    @property
    def clusters(self) -> int:
        return self.weight.shape[0]

    def named_params(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


@dataclass
class IntentionState:
    """Frozen per-user cluster matrices, the cacheable output of clustering.

    ``job_clusters`` and ``joint_job_clusters`` hold the ID-stream rows;
    ``query_clusters`` holds the query-text rows. Streams a variant does not
    use are None.
    """

    job_clusters: np.ndarray | None
    joint_job_clusters: np.ndarray | None
    query_clusters: np.ndarray | None
    computed_at: float = field(default_factory=time.time)


def _assignment(logits_t: Tensor, axis: str) -> Tensor:
    # logits_t has shape (L, k); returns the (k, L) assignment matrix.
    if axis == "clusters":
        return T.transpose(T.softmax(logits_t, axis=1))
    if axis == "history":
        return T.transpose(T.softmax(logits_t, axis=0))
    raise ConfigError(f"cluster softmax axis must be one of {CLUSTER_AXIS_CHOICES}, got {axis!r}")


def cluster_job_stream(history_emb: Tensor, params: ClusterParams,
                       axis: str = "clusters") -> tuple[Tensor, Tensor]:
    """Soft-cluster the (L, d) history-job embeddings into k intention rows.

    Returns the (k, L) assignment matrix (each history column is a
    distribution over clusters in the default axis mode) and the (k, d)
    cluster matrix, a probability-weighted sum of history rows.
    """
    if history_emb.values.ndim != 2 or history_emb.shape[0] < 1:
        raise ShapeError(f"history embeddings must be (L, d) with L >= 1, got {history_emb.shape}")
    logits_t = T.add_row_bias(T.matmul(history_emb, T.transpose(params.weight)), params.bias)
    assign = _assignment(logits_t, axis)
    return assign, T.matmul(assign, history_emb)


def cluster_joint(query_emb: Tensor, history_emb: Tensor, params: ClusterParams,
                  axis: str = "clusters") -> tuple[Tensor, Tensor, Tensor]:
    """Cluster query and job rows under one assignment computed from both.

    The assignment comes from the row-wise concatenation [query; job], then is
    applied to each stream separately, so the query-cluster keys and the
    job-cluster values describe the same soft groups.
    """
    if query_emb.shape[0] != history_emb.shape[0]:
        raise ShapeError(
            f"query and job sequences differ in length: {query_emb.shape} vs {history_emb.shape}"
        )
    pairs = T.concat([query_emb, history_emb], axis=1)
    logits_t = T.add_row_bias(T.matmul(pairs, T.transpose(params.weight)), params.bias)
    assign = _assignment(logits_t, axis)
    return assign, T.matmul(assign, query_emb), T.matmul(assign, history_emb)


def multi_head_attend(query: Tensor, keys: Tensor, values: Tensor,
                      params: AttentionParams, attn_sink: list | None = None) -> Tensor:
    """Scaled dot-product attention of one query vector over key/value rows."""
    if keys.shape[0] != values.shape[0]:
        raise ShapeError(f"keys and values row counts differ: {keys.shape} vs {values.shape}")
    inv_sqrt_d = 1.0 / np.sqrt(params.cfg.head_dim)
    heads = []
    for i in range(params.cfg.heads):
        q = T.matmul(query, params.wq[i])
        k = T.matmul(keys, params.wk[i])
        v = T.matmul(values, params.wv[i])
        scores = T.scale(T.matmul(k, q), inv_sqrt_d)
        weights = T.softmax(scores, axis=0)
        if attn_sink is not None:
            attn_sink.append(weights.values.copy())
        heads.append(T.matmul(weights, v))
    stacked = heads[0] if len(heads) == 1 else T.concat(heads, axis=0)
    return T.matmul(stacked, params.wo)


def job_intention(job_emb: Tensor, job_clusters: Tensor,
                  params: AttentionParams, attn_sink: list | None = None) -> Tensor:
    """Intention readout for the ID stream: the job embedding queries the clusters."""
    return multi_head_attend(job_emb, job_clusters, job_clusters, params, attn_sink)


def query_intention(jd_emb: Tensor, query_clusters: Tensor, value_clusters: Tensor,
                    params: AttentionParams, attn_sink: list | None = None) -> Tensor:
    """Intention readout for the text stream.

    The projected job-description vector queries the clustered query
    representations; the aligned clustered ID representations act as values so
    the result lives in the same space as the ID-stream readout.
    """
    return multi_head_attend(jd_emb, query_clusters, value_clusters, params, attn_sink)


def fuse_intentions(id_stream: Tensor, text_stream: Tensor, weight: float) -> Tensor:
    """Convex combination of the two stream readouts.

    The boundary weights short-circuit to the surviving stream so that a
    weight of exactly 1 (or 0) is bit-identical to dropping the other stream.
    """
    if not 0.0 <= weight <= 1.0:
        raise ConfigError(f"fusion weight must be in [0, 1], got {weight}")
    if weight == 1.0:
        return id_stream
    if weight == 0.0:
        return text_stream
    return T.add(T.scale(id_stream, weight), T.scale(text_stream, 1.0 - weight))


def intention_match(fused: Tensor, job_emb: Tensor, mlp,
                    dropout_p: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    """Match features between the fused intention and the candidate job embedding.

    Feature layout is fixed: [fused; job; fused - job; fused * job].
    """
    if fused.shape != job_emb.shape or fused.values.ndim != 1:
        raise ShapeError(f"intention_match expects equal vectors, got {fused.shape} and {job_emb.shape}")
    if mlp.widths[0] != 4 * fused.shape[0]:
        raise ConfigError(
            f"match MLP input width {mlp.widths[0]} != 4 * d_j = {4 * fused.shape[0]}"
        )
    features = T.concat([fused, job_emb, T.sub(fused, job_emb), T.mul(fused, job_emb)], axis=0)
    return mlp(features, dropout_p, rng)
