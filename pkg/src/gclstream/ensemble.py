"""Inference-time aggregation over the online head and an expert's EMA bank.

Every prediction runs the (adapted) features through head 0 — the shared
online head — and each shadow head of the selected expert's bank, then
combines the per-head outputs one of six ways.  The ``softmax_*`` variants
apply the masked softmax per head and combine probabilities element-wise;
the plain variants combine masked raw logits element-wise and softmax once.
``*min_entropy`` variants pick, per sample, the head whose masked softmax has
minimal Shannon entropy (nats, unmasked support only), ties to the online
head.

The combined score vector is not necessarily a distribution (element-wise max
of softmaxes does not sum to 1); the predicted class is its argmax with
lowest-class tie-breaking, and masked classes — exact zeros everywhere — can
never win.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic_router import RouterState, route
from .errors import ShapeError
from .experts import EmaBank, ExpertAdapter, Head, LogitMask, masked_softmax

AGGREGATIONS = (
    "mean", "max_prob", "min_entropy",
    "softmax_mean", "softmax_max", "softmax_min_entropy",
)

ROUTING_MODES = (
    "ridge", "latest", "oracle",
    "prototype", "naive_bayes", "kmeans", "trained_shallow",
)


@dataclass
class EnsembleConfig:
    aggregation: str = "softmax_max"

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(
                f"unknown aggregation {self.aggregation!r}; "
                f"choose from {AGGREGATIONS}"
            )


def _entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats per row; zero entries contribute 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=-1)


def ensemble_predict(features: np.ndarray, adapter: ExpertAdapter,
                     bank: EmaBank | None, online: Head, mask: LogitMask,
                     config: EnsembleConfig):
    """Predict a batch with one expert; returns (scores B x C, classes B).

    ``bank`` may be None or empty (online head only), in which case every
    aggregation degenerates to the plain masked softmax of the online head.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    heads = [online] + (list(bank.heads) if bank is not None else [])
    if not heads:
        raise ValueError("no heads to ensemble")
    if mask.values.shape[0] != online.weights.shape[0]:
        raise ShapeError(
            f"mask length {mask.values.shape[0]} does not match "
            f"{online.weights.shape[0]} classes"
        )

    adapted = adapter.adapted(features)
    logits = np.stack([h.logits(adapted) for h in heads])   # J x B x C
    probs = np.stack([masked_softmax(l, mask.values) for l in logits])

    agg = config.aggregation
    if agg == "softmax_mean":
        scores = probs.mean(axis=0)
    elif agg == "softmax_max":
        scores = probs.max(axis=0)
    elif agg == "softmax_min_entropy":
        pick = np.argmin(_entropy(probs), axis=0)            # ties -> head 0
        scores = probs[pick, np.arange(features.shape[0])]
    elif agg == "mean":
        scores = masked_softmax(logits.mean(axis=0), mask.values)
    elif agg == "max_prob":
        scores = masked_softmax(logits.max(axis=0), mask.values)
    else:  # min_entropy: entropy-selected head's logits, softmaxed once
        pick = np.argmin(_entropy(probs), axis=0)
        chosen = logits[pick, np.arange(features.shape[0])]
        scores = masked_softmax(chosen, mask.values)

    return scores, np.argmax(scores, axis=1)


@dataclass
class InferenceResult:
    selections: np.ndarray           # routed expert per sample
    predictions: np.ndarray          # predicted class per sample
    scores: np.ndarray               # combined score vectors, B x C
    routing_scores: np.ndarray | None = None   # B x T when ridge-routed
    oracle_fallbacks: int = 0
    head_logits: np.ndarray | None = None      # B x heads x C when collected


def full_inference(features: np.ndarray, expansion, router, pool, mask,
                   config: EnsembleConfig, *, routing: str = "ridge",
                   true_labels=None, history=None, baseline=None,
                   collect_head_logits: bool = False) -> InferenceResult:
    """Route every sample to an expert, then ensemble-predict per expert.

    routing modes: ``ridge`` — the solved analytic router; ``latest`` —
    always the newest expert (router disabled); ``oracle`` — lowest-id expert
    that trained the true label, falling back to ridge for labels no expert
    trained (fallbacks counted); baseline kinds — delegate to the fitted
    baseline router.
    """
    if routing not in ROUTING_MODES:
        raise ValueError(
            f"unknown routing mode {routing!r}; choose from {ROUTING_MODES}"
        )
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    B = features.shape[0]
    if pool.num_experts < 1:
        raise ValueError("no experts have been spawned")

    routing_scores = None
    fallbacks = 0
    if routing == "ridge":
        routing_scores, selections = route(features, expansion, router)
    elif routing == "latest":
        selections = np.full(B, pool.current, dtype=np.int64)
    elif routing == "oracle":
        if true_labels is None or history is None:
            raise ValueError("oracle routing needs true labels and history")
        from .baselines import oracle_route
        selections = np.empty(B, dtype=np.int64)
        ridge_sel = None
        for i, label in enumerate(np.asarray(true_labels)):
            choice = oracle_route(int(label), history)
            if choice is None:
                if ridge_sel is None:
                    routing_scores, ridge_sel = route(features, expansion,
                                                      router)
                choice = int(ridge_sel[i])
                fallbacks += 1
            selections[i] = choice
    else:
        from .baselines import baseline_route
        if baseline is None:
            raise ValueError(f"routing {routing!r} needs a fitted baseline")
        selections = baseline_route(baseline, features, expansion)

    scores = np.empty((B, pool.num_classes))
    predictions = np.empty(B, dtype=np.int64)
    head_logits = None
    if collect_head_logits:
        head_logits = np.empty((B, 1 + len(pool.decays), pool.num_classes))
    for expert_id in np.unique(selections):
        idx = np.nonzero(selections == expert_id)[0]
        adapter = pool.adapters[expert_id]
        bank = pool.banks[expert_id]
        sub = features[idx]
        z, yhat = ensemble_predict(sub, adapter, bank, pool.online, mask,
                                   config)
        scores[idx] = z
        predictions[idx] = yhat
        if collect_head_logits:
            adapted = adapter.adapted(sub)
            stacked = np.stack(
                [pool.online.logits(adapted)]
                + [h.logits(adapted) for h in bank.heads], axis=1)
            head_logits[idx] = stacked

    return InferenceResult(
        selections=selections, predictions=predictions, scores=scores,
        routing_scores=routing_scores, oracle_fallbacks=fallbacks,
        head_logits=head_logits,
    )
