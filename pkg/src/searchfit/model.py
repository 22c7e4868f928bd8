"""Full scorer: text matching plus intention modeling, with ablation variants."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

from . import tensor as T
from .encoders import (
    CrossEncoder,
    CrossEncoderConfig,
    EmbeddingTable,
    encode_job_desc,
    pool_tokens,
)
from .errors import ConfigError, UnknownIdError, ValidationError
from .intention import (
    AttentionParams,
    ClusterParams,
    IntentionState,
    MHAConfig,
    cluster_job_stream,
    cluster_joint,
    fuse_intentions,
    intention_match,
    job_intention,
    multi_head_attend,
    query_intention,
)
from .layers import LinearMap, Mlp, normal_param
from .tensor import Tensor
from .vocab import PAD_ID

VARIANTS = ("full", "no_q", "no_j", "no_c", "text_only")


@dataclass
class ModelConfig:
    """All model hyperparameters; every field is a CLI flag."""

    fusion_lambda: float = 0.6
    clusters: int = 4
    heads: int = 1
    d_j: int = 16
    d_w: int = 128
    dropout: float = 0.2
    l_max: int = 16
    encoder_layers: int = 2
    encoder_heads: int = 2
    ffn_width: int = 256
    max_tokens: int = 64
    intention_hidden: int = 64
    intention_out: int = 32
    prediction_hidden: int = 64
    variant: str = "full"
    cluster_softmax_axis: str = "clusters"
    query_stream_values: str = "cj_prime"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if not 0.0 <= self.fusion_lambda <= 1.0:
            raise ConfigError(f"fusion lambda must be in [0, 1], got {self.fusion_lambda}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.clusters <= 0:
            raise ConfigError(f"cluster count must be positive, got {self.clusters}")
        if self.l_max < 1:
            raise ConfigError(f"l_max must be >= 1, got {self.l_max}")
        if self.d_j % self.heads != 0:
            raise ConfigError(f"d_j={self.d_j} not divisible by heads={self.heads}")
        if self.cluster_softmax_axis not in ("clusters", "history"):
            raise ConfigError(f"bad cluster_softmax_axis {self.cluster_softmax_axis!r}")
        if self.query_stream_values not in ("cj_prime", "cj"):
            raise ConfigError(f"bad query_stream_values {self.query_stream_values!r}")
        if self.query_stream_values == "cj" and self.variant != "full":
            raise ConfigError("query_stream_values='cj' needs the full variant (both streams clustered)")
        self.encoder_config().validate()

    def encoder_config(self) -> CrossEncoderConfig:
        return CrossEncoderConfig(
            layers=self.encoder_layers,
            heads=self.encoder_heads,
            d_w=self.d_w,
            ffn_width=self.ffn_width,
            max_tokens=self.max_tokens,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class UserInput:
    """Model-ready view of a candidate: encoded resume and search history."""

    user_id: int
    resume_ids: list[int]
    history: list[tuple[list[int], int]] = field(default_factory=list)  # (query ids, job id)


@dataclass
class JobInput:
    job_id: int
    jd_ids: list[int] = field(default_factory=list)


@dataclass
class ScoredPair:
    user_id: int
    job_id: int
    y_hat: float
    components: dict


def _pool_query_group(histories: list[list[int]], word_table: EmbeddingTable) -> Tensor:
    """Mean-pool every query of a history in one gather plus one matmul.

    All query tokens are looked up together; a constant block-averaging matrix
    then reduces each query's rows to its mean.
    """
    all_ids: list[int] = []
    lengths: list[int] = []
    for q in histories:
        kept = [i for i in q if i != PAD_ID]
        if not kept:
            raise ValidationError("history entry has an empty query")
        all_ids.extend(kept)
        lengths.append(len(kept))
    gathered = T.gather_rows(word_table.table, all_ids)
    avg = np.zeros((len(lengths), len(all_ids)))
    off = 0
    for i, ln in enumerate(lengths):
        avg[i, off:off + ln] = 1.0 / ln
        off += ln
    return T.matmul(Tensor(avg), gathered)


class SearchFitModel:
    """Scores (candidate, job) pairs from text and search-history intention.

    The variant decides which submodules exist: ``text_only`` keeps just the
    cross-encoder; ``no_q``/``no_j`` drop one intention stream; ``no_c`` keeps
    both streams but attends over raw history rows instead of clusters.
    """

    def __init__(self, cfg: ModelConfig, vocab_size: int, num_jobs: int, num_users: int,
                 seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.num_jobs = num_jobs
        self.num_users = num_users
        self.seed = seed
        rng = np.random.default_rng(seed)

        v = cfg.variant
        self.uses_intention = v != "text_only"
        self.uses_job_stream = v in ("full", "no_q", "no_c")
        self.uses_query_stream = v in ("full", "no_j", "no_c")
        self.uses_clustering = v in ("full", "no_q", "no_j")

        self.word_table = EmbeddingTable("word", vocab_size, cfg.d_w, rng)
        self.encoder = CrossEncoder(cfg.encoder_config(), self.word_table, rng)

        self.job_table = None
        self.user_table = None
        self.query_projection = None
        self.jd_projection = None
        self.job_cluster = None
        self.joint_cluster = None
        self.attn_job = None
        self.attn_query = None
        self.intention_mlp = None
        self.empty_history_vec = None

        if self.uses_intention:
            self.job_table = EmbeddingTable("job_id", num_jobs, cfg.d_j, rng)
            self.user_table = EmbeddingTable("user_id", num_users, cfg.d_j, rng)
            mha = MHAConfig(heads=cfg.heads, model_dim=cfg.d_j)
            if self.uses_job_stream:
                if self.uses_clustering:
                    self.job_cluster = ClusterParams(cfg.clusters, cfg.d_j, rng)
                self.attn_job = AttentionParams(mha, rng)
            if self.uses_query_stream:
                self.query_projection = LinearMap(cfg.d_w, cfg.d_j, rng)
                self.jd_projection = LinearMap(cfg.d_w, cfg.d_j, rng)
                if self.uses_clustering:
                    self.joint_cluster = ClusterParams(cfg.clusters, 2 * cfg.d_j, rng)
                self.attn_query = AttentionParams(mha, rng)
            self.intention_mlp = Mlp([4 * cfg.d_j, cfg.intention_hidden, cfg.intention_out], rng)
            self.empty_history_vec = normal_param(rng, cfg.intention_out)
            pred_in = cfg.d_w + cfg.intention_out + 1
        else:
            pred_in = cfg.d_w
        self.prediction_mlp = Mlp([pred_in, cfg.prediction_hidden, 1], rng)

    # -- parameters ---------------------------------------------------------

    def named_params(self) -> Iterable[tuple[str, Tensor]]:
        yield "word_table", self.word_table.table
        yield from self.encoder.named_params("encoder")
        if self.uses_intention:
            yield "job_table", self.job_table.table
            yield "user_table", self.user_table.table
            if self.job_cluster is not None:
                yield from self.job_cluster.named_params("job_cluster")
            if self.attn_job is not None:
                yield from self.attn_job.named_params("attn_job")
            if self.query_projection is not None:
                yield from self.query_projection.named_params("query_projection")
                yield from self.jd_projection.named_params("jd_projection")
            if self.joint_cluster is not None:
                yield from self.joint_cluster.named_params("joint_cluster")
            if self.attn_query is not None:
                yield from self.attn_query.named_params("attn_query")
            yield from self.intention_mlp.named_params("intention_mlp")
            yield "empty_history_vec", self.empty_history_vec
        yield from self.prediction_mlp.named_params("prediction_mlp")

    def param_list(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def param_dict(self) -> dict[str, Tensor]:
        return dict(self.named_params())

    def load_param_values(self, values: dict[str, np.ndarray], strict: bool = True) -> None:
        """Overwrite parameter values by name (shapes must match exactly)."""
        own = self.param_dict()
        for name, arr in values.items():
            if name not in own:
                if strict:
                    raise ConfigError(f"checkpoint parameter {name!r} not in model")
                continue
            if own[name].shape != arr.shape:
                raise ConfigError(
                    f"shape mismatch for {name!r}: model {own[name].shape}, values {arr.shape}"
                )
            own[name].values = np.ascontiguousarray(arr, dtype=np.float64)
        if strict:
            missing = set(own) - set(values)
            if missing:
                raise ConfigError(f"checkpoint missing parameters: {sorted(missing)}")

    def snapshot_params(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.named_params()}

    # -- forward ------------------------------------------------------------

    def _check_ids(self, user: UserInput, job: JobInput) -> None:
        if not 0 <= job.job_id < self.num_jobs:
            raise UnknownIdError(f"job id {job.job_id} outside [0, {self.num_jobs})")
        if not 0 <= user.user_id < self.num_users:
            raise UnknownIdError(f"user id {user.user_id} outside [0, {self.num_users})")

    def _resolve_variant(self, variant: str | None) -> str:
        if variant is None or variant == self.cfg.variant:
            return self.cfg.variant
        if self.cfg.variant == "full" and variant in ("no_q", "no_j", "no_c"):
            return variant
        raise ConfigError(
            f"model built as {self.cfg.variant!r} cannot emulate variant {variant!r}"
        )

    def _effective_lambda(self, variant: str) -> float:
        if variant == "no_q":
            return 1.0
        if variant == "no_j":
            return 0.0
        return self.cfg.fusion_lambda

    def _intention_from_history(self, user: UserInput, job_emb: Tensor, jd_emb_query,
                                variant: str, lam: float,
                                dropout_p: float, rng, attn_sink=None) -> Tensor:
        history = user.history[-self.cfg.l_max:]
        job_ids = [j for _, j in history]
        history_emb = T.gather_rows(self.job_table.table, job_ids)

        id_readout = None
        text_readout = None
        if self.uses_job_stream and variant != "no_j" and lam > 0.0:
            if variant == "no_c":
                id_readout = multi_head_attend(job_emb, history_emb, history_emb,
                                               self.attn_job, attn_sink)
            else:
                _, clusters = cluster_job_stream(history_emb, self.job_cluster,
                                                 self.cfg.cluster_softmax_axis)
                id_readout = job_intention(job_emb, clusters, self.attn_job, attn_sink)
        if self.uses_query_stream and variant != "no_q" and lam < 1.0:
            pooled = _pool_query_group([q for q, _ in history], self.word_table)
            query_emb = self.query_projection(pooled)
            if variant == "no_c":
                text_readout = multi_head_attend(jd_emb_query, query_emb, history_emb,
                                                 self.attn_query, attn_sink)
            else:
                _, query_clusters, joint_job_clusters = cluster_joint(
                    query_emb, history_emb, self.joint_cluster, self.cfg.cluster_softmax_axis)
                if self.cfg.query_stream_values == "cj":
                    _, values = cluster_job_stream(history_emb, self.job_cluster,
                                                   self.cfg.cluster_softmax_axis)
                else:
                    values = joint_job_clusters
                text_readout = query_intention(jd_emb_query, query_clusters, values,
                                               self.attn_query, attn_sink)

        if id_readout is None and text_readout is None:
            raise ConfigError(f"variant {variant!r} computed no intention stream")
        fused = (id_readout if text_readout is None
                 else text_readout if id_readout is None
                 else fuse_intentions(id_readout, text_readout, lam))
        return intention_match(fused, job_emb, self.intention_mlp, dropout_p, rng)

    def forward(self, user: UserInput, job: JobInput,
                rng: np.random.Generator | None = None,
                variant: str | None = None, attn_sink: list | None = None
                ) -> tuple[Tensor, dict]:
        """Score one pair; returns the (1,)-shaped probability tensor and components.

        Dropout is active only when ``rng`` is given (training mode).
        """
        self._check_ids(user, job)
        variant = self._resolve_variant(variant)
        dropout_p = self.cfg.dropout if rng is not None else 0.0

        text_vec = self.encoder.encode(user.resume_ids, job.jd_ids, dropout_p, rng, attn_sink)
        if variant == "text_only":
            logit = self.prediction_mlp(text_vec, dropout_p, rng)
            y_hat = T.sigmoid(logit)
            return y_hat, {"o_t_norm": float(np.linalg.norm(text_vec.values))}

        job_emb = T.take_row(self.job_table.table, job.job_id)
        user_emb = T.take_row(self.user_table.table, user.user_id)
        s_match = T.dot(job_emb, user_emb)

        lam = self._effective_lambda(variant)
        needs_jd_query = (self.uses_query_stream and variant not in ("no_q",) and lam < 1.0)
        jd_emb_query = None
        if needs_jd_query and user.history:
            jd_emb_query = encode_job_desc(job.jd_ids, self.word_table, self.jd_projection)

        if user.history:
            o_i = self._intention_from_history(user, job_emb, jd_emb_query, variant,
                                               lam, dropout_p, rng, attn_sink)
        else:
            o_i = self.empty_history_vec

        logit = self.prediction_mlp(T.concat([text_vec, o_i, s_match], axis=0), dropout_p, rng)
        y_hat = T.sigmoid(logit)
        components = {
            "s_match": float(s_match.values[0]),
            "o_t_norm": float(np.linalg.norm(text_vec.values)),
            "o_i_norm": float(np.linalg.norm(o_i.values)),
        }
        return y_hat, components

    def score_pair(self, user: UserInput, job: JobInput,
                   variant: str | None = None) -> ScoredPair:
        """Deterministic inference-mode scoring of one pair."""
        y_hat, components = self.forward(user, job, rng=None, variant=variant)
        return ScoredPair(user.user_id, job.job_id, float(y_hat.values[0]), components)

    def batch_loss(self, pairs: list[tuple[UserInput, JobInput, int]],
                   rng: np.random.Generator | None = None,
                   variant: str | None = None) -> Tensor:
        """Summed binary cross entropy over the batch."""
        if not pairs:
            raise ValidationError("batch_loss on an empty batch")
        scores = [self.forward(u, j, rng, variant)[0] for u, j, _ in pairs]
        y_hat = scores[0] if len(scores) == 1 else T.concat(scores, axis=0)
        labels = Tensor(np.array([float(lbl) for _, _, lbl in pairs]))
        return T.bce_loss(y_hat, labels)

    # -- serving support ----------------------------------------------------

    def intention_state(self, user: UserInput) -> IntentionState:
        """Precompute the user's cluster matrices for the lazy-update cache.

        Only clustered variants have a history-length-independent state; the
        raw-sequence variant (``no_c``) and ``text_only`` cannot be cached.
        """
        if not (self.uses_intention and self.uses_clustering):
            raise ConfigError(f"variant {self.cfg.variant!r} has no cacheable intention state")
        if not user.history:
            return IntentionState(None, None, None)
        history = user.history[-self.cfg.l_max:]
        job_ids = [j for _, j in history]
        history_emb = T.gather_rows(self.job_table.table, job_ids)
        job_clusters = None
        query_clusters = None
        joint_job_clusters = None
        if self.job_cluster is not None:
            _, c = cluster_job_stream(history_emb, self.job_cluster, self.cfg.cluster_softmax_axis)
            job_clusters = c.values
        if self.joint_cluster is not None:
            pooled = _pool_query_group([q for q, _ in history], self.word_table)
            query_emb = self.query_projection(pooled)
            _, cq, cjp = cluster_joint(query_emb, history_emb, self.joint_cluster,
                                       self.cfg.cluster_softmax_axis)
            query_clusters = cq.values
            joint_job_clusters = cjp.values
        return IntentionState(job_clusters, joint_job_clusters, query_clusters)

    def score_from_state(self, user: UserInput, job: JobInput,
                         state: IntentionState) -> ScoredPair:
        """Score against cached cluster matrices; never touches the history."""
        self._check_ids(user, job)
        if self.cfg.variant == "text_only":
            return self.score_pair(user, job)
        variant = self.cfg.variant
        lam = self._effective_lambda(variant)

        text_vec = self.encoder.encode(user.resume_ids, job.jd_ids)
        job_emb = T.take_row(self.job_table.table, job.job_id)
        user_emb = T.take_row(self.user_table.table, user.user_id)
        s_match = T.dot(job_emb, user_emb)

        has_state = state.job_clusters is not None or state.query_clusters is not None
        if not has_state:
            o_i = self.empty_history_vec
        else:
            id_readout = None
            text_readout = None
            if state.job_clusters is not None and lam > 0.0:
                clusters = Tensor(state.job_clusters)
                id_readout = job_intention(job_emb, clusters, self.attn_job)
            if state.query_clusters is not None and lam < 1.0:
                jd_emb_query = encode_job_desc(job.jd_ids, self.word_table, self.jd_projection)
                if self.cfg.query_stream_values == "cj":
                    values = Tensor(state.job_clusters)
                else:
                    values = Tensor(state.joint_job_clusters)
                text_readout = query_intention(jd_emb_query, Tensor(state.query_clusters),
                                               values, self.attn_query)
            fused = (id_readout if text_readout is None
                     else text_readout if id_readout is None
                     else fuse_intentions(id_readout, text_readout, lam))
            o_i = intention_match(fused, job_emb, self.intention_mlp)

        logit = self.prediction_mlp(T.concat([text_vec, o_i, s_match], axis=0))
        y_hat = T.sigmoid(logit)
        return ScoredPair(user.user_id, job.job_id, float(y_hat.values[0]),
                          {"s_match": float(s_match.values[0])})


def forward_variant(model: SearchFitModel, variant: str, user: UserInput,
                    job: JobInput) -> ScoredPair:
    """Score a pair under an explicit variant (must be emulable by the model)."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    return model.score_pair(user, job, variant=variant)
