"""Streaming closed-form ridge router.

The router keeps two sufficient statistics over expanded features: the Gram
matrix G (M x M) and per-expert feature sums Q (M x T).  Each training batch
adds Phi^T Phi to G and the column sums of Phi to the column of the expert
that was active.  Routing weights come from one symmetric positive-definite
solve, (G + lambda*I) U^T = Q, performed lazily at evaluation time; the
result is exactly the batch ridge regression onto one-hot expert labels, so a
brute-force oracle can verify the streaming path.

Experts are only ever added: growing from T to T+1 zero-pads Q with a new
column, leaving everything already accumulated untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NotSolvedError, NumericalError, ShapeError
from .expansion import ExpandedBatch, RandomExpansion

# Symmetry drift beyond this triggers re-symmetrization of G.
_SYM_TOL = 1e-12


@dataclass
class RouterState:
    """Streaming statistics and the (lazily) solved routing matrix.

    ``solved`` holds U with shape T x M once solve() has run and no
    accumulate/grow has happened since; anything that mutates the statistics
    resets it to None.
    """

    gram: np.ndarray            # M x M, symmetric PSD
    proto: np.ndarray           # M x T
    lam: float
    samples_seen: int = 0
    solved: np.ndarray | None = None
    seed: int | None = None     # expansion seed, recorded for snapshots
    jitter_used: float = 0.0    # last jitter that made the factorization pass

    @property
    def M(self) -> int:
        return self.gram.shape[0]

    @property
    def num_experts(self) -> int:
        return self.proto.shape[1]


def new_router_state(M: int, lam: float, num_experts: int = 1,
                     seed: int | None = None) -> RouterState:
    if M <= 0:
        raise ShapeError(f"M must be positive, got {M}")
    if lam <= 0:
        raise ValueError(f"ridge lambda must be positive, got {lam}")
    if num_experts < 1:
        raise ValueError(f"need at least one expert, got {num_experts}")
    return RouterState(
        gram=np.zeros((M, M), dtype=np.float64),
        proto=np.zeros((M, num_experts), dtype=np.float64),
        lam=float(lam),
        seed=seed,
    )


def accumulate(state: RouterState, batch: ExpandedBatch) -> RouterState:
    """Fold one expanded batch into G and Q. Mutates and returns ``state``."""
    phi = np.asarray(batch.values, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[1] != state.M:
        raise ShapeError(
            f"batch width {phi.shape[-1] if phi.ndim else '?'} does not match "
            f"router width {state.M}"
        )
    if phi.shape[0] == 0:
        return state
    if batch.expert_id is None or not 0 <= batch.expert_id < state.num_experts:
        raise ValueError(
            f"expert id {batch.expert_id!r} is not registered "
            f"(have {state.num_experts} experts)"
        )
    if not np.isfinite(phi).all():
        raise NumericalError("non-finite values in expanded batch")

    state.gram += phi.T @ phi
    drift = np.abs(state.gram - state.gram.T).max()
    if drift > _SYM_TOL:
        state.gram += state.gram.T
        state.gram *= 0.5
    state.proto[:, batch.expert_id] += phi.sum(axis=0)
    state.samples_seen += phi.shape[0]
    state.solved = None
    return state


def solve(state: RouterState) -> np.ndarray:
    """Return routing weights U (T x M) with (G + lam*I) U^T = Q.

    Idempotent until the next accumulate/grow.  The SPD factorization gets a
    trace-scaled jitter escalated x10 up to three times before giving up.
    """
    if state.solved is not None:
        return state.solved

    eye = np.eye(state.M)
    base = state.gram + state.lam * eye
    jitter = 0.0
    step = 1e-10 * np.trace(state.gram) / state.M
    for attempt in range(4):
        try:
            factor = cho_factor(base + jitter * eye, lower=True,
                                check_finite=False)
            break
        except np.linalg.LinAlgError:
            if attempt == 3:
                raise NumericalError(
                    f"SPD factorization failed at jitter {jitter:g} "
                    f"(lambda={state.lam:g})"
                )
            jitter = step if jitter == 0.0 else jitter * 10.0
    else:  # pragma: no cover - loop always breaks or raises
        raise AssertionError
    ut = cho_solve(factor, state.proto, check_finite=False)
    state.solved = np.ascontiguousarray(ut.T)
    state.jitter_used = jitter
    return state.solved


def route(features: np.ndarray, expansion: RandomExpansion,
          router: RouterState | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Score experts for each row and pick the argmax (lowest id on ties).

    ``router`` may be a solved U matrix or a RouterState whose solve() has
    already run; passing an unsolved state is an error so that stale scores
    can never leak into an evaluation.
    """
    if isinstance(router, RouterState):
        if router.solved is None:
            raise NotSolvedError(
                "router has unsolved updates; call solve(state) first"
            )
        weights = router.solved
    else:
        weights = np.asarray(router, dtype=np.float64)
    if weights.shape[1] != expansion.M:
        raise ShapeError(
            f"router width {weights.shape[1]} does not match expansion "
            f"width {expansion.M}"
        )
    phi = expansion(np.atleast_2d(features))
    scores = phi @ weights.T
    selections = np.argmax(scores, axis=1)  # first occurrence == lowest id
    return scores, selections


def grow(state: RouterState, new_expert_count: int) -> RouterState:
    """Zero-pad Q out to ``new_expert_count`` columns (experts never shrink)."""
    if new_expert_count <= state.num_experts:
        raise ValueError(
            f"cannot shrink experts from {state.num_experts} "
            f"to {new_expert_count}"
        )
    pad = np.zeros((state.M, new_expert_count - state.num_experts))
    state.proto = np.hstack([state.proto, pad])
    state.solved = None
    return state


def snapshot(state: RouterState) -> dict:
    """Lossless field dict for checkpointing (versioned by the harness)."""
    return {
        "gram": state.gram,
        "proto": state.proto,
        "lam": np.float64(state.lam),
        "samples_seen": np.int64(state.samples_seen),
        "seed": np.int64(-1 if state.seed is None else state.seed),
    }


def restore(snap: dict) -> RouterState:
    seed = int(snap["seed"])
    return RouterState(
        gram=np.array(snap["gram"], dtype=np.float64),
        proto=np.array(snap["proto"], dtype=np.float64),
        lam=float(snap["lam"]),
        samples_seen=int(snap["samples_seen"]),
        seed=None if seed < 0 else seed,
    )
