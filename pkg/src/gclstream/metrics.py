"""Continual-learning metric suite.

Everything derives from two records kept by the harness: the session accuracy
matrix R — R[i, j] is accuracy on session-j evaluation data measured right
after session i finished — and the anytime history a_s, accuracy on held-out
samples of all classes seen so far, recorded every eval_interval batches.

Final/average accuracy, forgetting, and backward transfer read the matrix;
the anytime mean summarizes the whole trajectory.  Routing accuracy counts a
prediction as correctly routed when the chosen expert trained on the true
class (a one-to-many correspondence: blurry classes have several correct
experts).  Linear CKA compares per-expert residual representations on a
shared probe set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _require_complete(row: np.ndarray, what: str) -> None:
    if np.isnan(row).any():
        raise ValueError(f"{what} incomplete: {row}")


def a_last(R: np.ndarray) -> float:
    """Mean of the final row: accuracy on every session after the last one."""
    R = np.asarray(R, dtype=np.float64)
    _require_complete(R[-1], "final session row")
    return float(R[-1].mean())


def a_avg(R: np.ndarray) -> float:
    """Mean of the diagonal: each session measured right after it ran."""
    R = np.asarray(R, dtype=np.float64)
    _require_complete(np.diag(R), "session diagonal")
    return float(np.diag(R).mean())


def f_last(R: np.ndarray) -> float:
    """Mean drop from each session's best recorded accuracy to its final one.

    The per-column max runs over all recorded rows including the last, so
    every term is >= 0.
    """
    R = np.asarray(R, dtype=np.float64)
    T = R.shape[0]
    _require_complete(R[-1], "final session row")
    drops = []
    for j in range(T):
        col = R[j:, j]  # rows i >= j are the recorded ones
        _require_complete(col, f"column {j}")
        drops.append(col.max() - R[-1, j])
    return float(np.mean(drops))


def bwt(R: np.ndarray) -> float:
    """Mean change on earlier sessions between their own row and the final row."""
    R = np.asarray(R, dtype=np.float64)
    T = R.shape[0]
    if T < 2:
        raise ValueError("backward transfer needs at least two sessions")
    _require_complete(R[-1], "final session row")
    _require_complete(np.diag(R), "session diagonal")
    return float(np.mean([R[-1, i] - R[i, i] for i in range(T - 1)]))


def a_auc(anytime) -> float:
    """Mean anytime accuracy over the recorded evaluation points."""
    anytime = np.asarray(anytime, dtype=np.float64)
    if anytime.size == 0:
        raise ValueError("anytime history is empty")
    return float(anytime.mean())


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("prediction/label length mismatch")
    if predictions.size == 0:
        raise ValueError("empty evaluation pool")
    return float(np.mean(predictions == labels))


def routing_accuracy(selections, true_labels, history) -> float:
    """Fraction routed to an expert that trained on the sample's true class."""
    selections = np.asarray(selections, dtype=np.int64)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if selections.shape != true_labels.shape:
        raise ValueError("selection/label length mismatch")
    hits = sum(1 for e, y in zip(selections, true_labels)
               if int(y) in history[int(e)])
    return hits / len(selections)


def linear_cka(Z_a: np.ndarray, Z_b: np.ndarray) -> float:
    """Linear CKA between two representation matrices (rows = samples).

    Columns are centered first; the value is invariant to isotropic scaling
    and orthogonal transformations of either operand and lies in [0, 1].
    """
    Z_a = np.asarray(Z_a, dtype=np.float64)
    Z_b = np.asarray(Z_b, dtype=np.float64)
    if Z_a.shape[0] != Z_b.shape[0]:
        raise ValueError(
            f"row counts differ: {Z_a.shape[0]} vs {Z_b.shape[0]}")
    Za = Z_a - Z_a.mean(axis=0)
    Zb = Z_b - Z_b.mean(axis=0)
    cross = np.linalg.norm(Za.T @ Zb) ** 2
    na = np.linalg.norm(Za.T @ Za)
    nb = np.linalg.norm(Zb.T @ Zb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm operand; CKA undefined")
    return float(cross / (na * nb))


@dataclass
class MetricsLedger:
    """Streaming records a run accumulates; metric functions read it frozen."""

    num_sessions: int
    session_matrix: np.ndarray = field(default=None)
    anytime: list = field(default_factory=list)
    routing_hits: int = 0
    routing_attempts: int = 0

    def __post_init__(self):
        if self.session_matrix is None:
            self.session_matrix = np.full(
                (self.num_sessions, self.num_sessions), np.nan)

    def record_anytime(self, acc: float) -> None:
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy outside [0,1]: {acc}")
        self.anytime.append(float(acc))

    def record_session_row(self, i: int, accs) -> None:
        for j, acc in enumerate(accs):
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy outside [0,1]: {acc}")
            self.session_matrix[i, j] = acc

    def record_routing(self, selections, true_labels, history) -> None:
        selections = np.asarray(selections, dtype=np.int64)
        true_labels = np.asarray(true_labels, dtype=np.int64)
        self.routing_attempts += len(selections)
        self.routing_hits += sum(
            1 for e, y in zip(selections, true_labels)
            if int(y) in history[int(e)])

    @property
    def streamed_routing_accuracy(self) -> float:
        if self.routing_attempts == 0:
            raise ValueError("no routing attempts recorded")
        return self.routing_hits / self.routing_attempts
