"""Blurry-boundary stream construction over frozen features.

The label space splits into a *disjoint* subset — classes confined to a
single session — and a *blurry* subset, where each class has a home session
holding most of its samples while a fixed count (ceil of blurry_ratio times
the class's sample count) scatters uniformly over the other sessions.  The
stream is strictly single-pass: every training sample id is yielded exactly
once, in seeded shuffled order, sliced into consecutive batches per session.

Two feature sources implement the same contract: a synthetic Gaussian-
prototype backbone (class prototypes and per-sample noise reproducible from
the seed and sample id) and a loader for precomputed feature files, so real
embeddings can be plugged in later.

A fixed fraction of every class is held out before scheduling; held-out rows
never enter the stream and feed all evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# SeedSequence purpose tags; every stochastic choice in the engine derives
# from (seed, tag, counters) so that no RNG state ever needs checkpointing.
TAG_STREAM = 11
TAG_DATA = 12


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class StreamConfig:
    num_classes: int = 20
    sessions: int = 5
    disjoint_ratio: float = 0.5
    blurry_ratio: float = 0.1
    batch_size: int = 64
    samples_per_class: int = 100
    eval_interval: int = 10
    seed: int = 1
    d: int = 32
    cluster_spread: float = 1.0
    noise_scale: float = 0.3
    holdout_fraction: float = 0.2
    feature_file: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.disjoint_ratio <= 1.0:
            raise ConfigError(f"disjoint_ratio outside [0,1]: {self.disjoint_ratio}")
        if not 0.0 <= self.blurry_ratio <= 1.0:
            raise ConfigError(f"blurry_ratio outside [0,1]: {self.blurry_ratio}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError(f"holdout_fraction outside [0,1): {self.holdout_fraction}")
        if min(self.num_classes, self.sessions, self.batch_size,
               self.samples_per_class, self.eval_interval, self.d) < 1:
            raise ConfigError("stream sizes must all be positive")


# ---------------------------------------------------------------------------
# feature sources
# ---------------------------------------------------------------------------

class SyntheticBackbone:
    """Gaussian class prototypes plus per-sample noise, all seed-derived.

    Sample id i has label i // samples_per_class and features
    mu_label + noise_scale * eps_i, with prototypes and noise drawn once from
    the stream seed, so features depend only on (seed, sample id).
    """

    def __init__(self, config: StreamConfig):
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, TAG_DATA]))
        C, spc, d = config.num_classes, config.samples_per_class, config.d
        self.d = d
        self.num_classes = C
        self.prototypes = config.cluster_spread * rng.standard_normal((C, d))
        self.labels = np.repeat(np.arange(C), spc)
        noise = rng.standard_normal((C * spc, d))
        self._X = self.prototypes[self.labels] + config.noise_scale * noise

    def features(self, ids) -> np.ndarray:
        return self._X[np.asarray(ids, dtype=np.int64)]

    def class_ids(self) -> dict[int, np.ndarray]:
        return {c: np.nonzero(self.labels == c)[0]
                for c in range(self.num_classes)}


class FileSource:
    """Feature source backed by a parsed feature file (same contract)."""

    def __init__(self, d, num_classes, labels, X):
        self.d = d
        self.num_classes = num_classes
        self.labels = labels
        self._X = X

    def features(self, ids) -> np.ndarray:
        return self._X[np.asarray(ids, dtype=np.int64)]

    def class_ids(self) -> dict[int, np.ndarray]:
        return {c: np.nonzero(self.labels == c)[0]
                for c in range(self.num_classes)}


def load_feature_file(path) -> FileSource:
    """Parse ``d=<int> classes=<int> rows=<int>`` + ``label,f1,...,fd`` lines.

    Errors name the byte offset of the offending line.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.strip():
        raise ConfigError(f"{path}: empty feature file")
    offset = 0
    lines = raw.split(b"\n")
    header = lines[0].decode("ascii", errors="replace").strip()
    parts = header.split()
    keys = [p.split("=", 1) for p in parts if "=" in p]
    fields = {k: v for k, v in keys}
    try:
        d = int(fields["d"])
        num_classes = int(fields["classes"])
        rows = int(fields["rows"])
    except (KeyError, ValueError):
        raise ConfigError(
            f"{path}: malformed header at byte 0: {header!r} "
            f"(expected 'd=<int> classes=<int> rows=<int>')"
        )
    offset = len(lines[0]) + 1

    labels = np.empty(rows, dtype=np.int64)
    X = np.empty((rows, d), dtype=np.float64)
    row = 0
    for line in lines[1:]:
        text = line.decode("ascii", errors="replace").strip()
        if not text:
            offset += len(line) + 1
            continue
        if row >= rows:
            raise ConfigError(
                f"{path}: more rows than the declared {rows} at byte {offset}")
        cells = text.split(",")
        if len(cells) != d + 1:
            raise ConfigError(
                f"{path}: row width {len(cells) - 1} != declared d={d} "
                f"at byte {offset}")
        try:
            label = int(cells[0])
            values = [float(v) for v in cells[1:]]
        except ValueError:
            raise ConfigError(f"{path}: unparseable row at byte {offset}")
        if not 0 <= label < num_classes:
            raise ConfigError(
                f"{path}: label {label} outside [0, {num_classes}) "
                f"at byte {offset}")
        labels[row] = label
        X[row] = values
        row += 1
        offset += len(line) + 1
    if row != rows:
        raise ConfigError(f"{path}: found {row} rows, header declared {rows}")
    return FileSource(d, num_classes, labels, X)


def write_feature_file(path, source) -> None:
    """Emit a source's rows at 17 significant digits (lossless round-trip)."""
    labels = source.labels
    X = source.features(np.arange(len(labels)))
    with open(path, "w") as fh:
        fh.write(f"d={source.d} classes={source.num_classes} "
                 f"rows={len(labels)}\n")
        for label, row in zip(labels, X):
            fh.write(f"{int(label)},{','.join(f'{v:.17g}' for v in row)}\n")


# ---------------------------------------------------------------------------
# partition and schedule
# ---------------------------------------------------------------------------

def partition_classes(num_classes: int, sessions: int, disjoint_ratio: float,
                      rng: np.random.Generator):
    """Split classes into a session-assigned disjoint map and a blurry set.

    Disjoint classes are chosen uniformly and spread over sessions as evenly
    as possible (per-session counts differ by at most one).
    """
    n_disjoint = _round_half_up(disjoint_ratio * num_classes)
    chosen = rng.choice(num_classes, size=n_disjoint, replace=False)
    disjoint_map: dict[int, int] = {}
    base, extra = divmod(n_disjoint, sessions)
    pos = 0
    for t in range(sessions):
        take = base + (1 if t < extra else 0)
        for c in chosen[pos:pos + take]:
            disjoint_map[int(c)] = t
        pos += take
    blurry = sorted(set(range(num_classes)) - set(disjoint_map))
    return disjoint_map, blurry


@dataclass
class SessionSchedule:
    sessions: list                      # per-session sample-id arrays, stream order
    disjoint_map: dict
    blurry: list
    home: dict                          # class -> home session (all classes)
    holdout_by_class: dict              # class -> held-out sample ids
    session_classes: list               # per-session set of train classes
    scatter_counts: dict                # blurry class -> samples outside home
    batches: list                       # (ids, session, is_session_start)
    session_sizes: list

    @property
    def total_train(self) -> int:
        return sum(self.session_sizes)


def build_schedule(config: StreamConfig, source) -> SessionSchedule:
    """Holdout split, blurry scatter, per-session shuffles, batch slicing.

    All randomness comes from one generator seeded by (seed, TAG_STREAM),
    consumed in a fixed order (partition, then per-class splits ascending,
    then per-session shuffles), so equal configs give identical schedules.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, TAG_STREAM]))
    T = config.sessions
    disjoint_map, blurry = partition_classes(
        source.num_classes, T, config.disjoint_ratio, rng)

    per_class = source.class_ids()
    holdout_by_class: dict[int, np.ndarray] = {}
    train_by_class: dict[int, np.ndarray] = {}
    for c in range(source.num_classes):
        ids = per_class[c]
        n_hold = _round_half_up(config.holdout_fraction * len(ids))
        if config.holdout_fraction > 0 and n_hold == 0:
            raise ConfigError(
                f"class {c} has {len(ids)} samples — too few for a "
                f"{config.holdout_fraction:.0%} holdout")
        perm = rng.permutation(ids)
        holdout_by_class[c] = np.sort(perm[:n_hold])
        train_by_class[c] = perm[n_hold:]

    session_lists: list[list[int]] = [[] for _ in range(T)]
    home: dict[int, int] = dict(disjoint_map)
    scatter_counts: dict[int, int] = {}
    for c, t in sorted(disjoint_map.items()):
        session_lists[t].extend(int(i) for i in train_by_class[c])
    for c in blurry:
        train = train_by_class[c]
        h = int(rng.integers(T))
        home[c] = h
        want = math.ceil(config.blurry_ratio * len(per_class[c]))
        k = 0 if T == 1 else min(want, len(train))
        scatter_counts[c] = k
        for i in train[:k]:
            other = int(rng.integers(T - 1))
            if other >= h:
                other += 1
            session_lists[other].append(int(i))
        session_lists[h].extend(int(i) for i in train[k:])

    sessions = []
    session_classes = []
    for t in range(T):
        if not session_lists[t]:
            raise ConfigError(
                f"session {t} received no training samples; use more "
                f"classes/samples or fewer sessions")
        order = rng.permutation(np.array(session_lists[t], dtype=np.int64))
        sessions.append(order)
        session_classes.append(set(int(l) for l in source.labels[order]))

    batches = []
    for t, ids in enumerate(sessions):
        for start in range(0, len(ids), config.batch_size):
            batches.append((ids[start:start + config.batch_size], t,
                            start == 0))
    return SessionSchedule(
        sessions=sessions, disjoint_map=disjoint_map, blurry=blurry,
        home=home, holdout_by_class=holdout_by_class,
        session_classes=session_classes, scatter_counts=scatter_counts,
        batches=batches, session_sizes=[len(s) for s in sessions],
    )


class StreamCursor:
    """Single-consumer batch iterator with checkpointable position."""

    def __init__(self, schedule: SessionSchedule, source):
        self.schedule = schedule
        self.source = source
        self.batch_index = 0

    def next_batch(self):
        """Yield (features, labels, ids, session, is_session_start) or None."""
        if self.batch_index >= len(self.schedule.batches):
            return None
        ids, session, is_start = self.schedule.batches[self.batch_index]
        self.batch_index += 1
        return (self.source.features(ids), self.source.labels[ids], ids,
                session, is_start)

    def skip_to(self, batch_index: int) -> None:
        if not 0 <= batch_index <= len(self.schedule.batches):
            raise ConfigError(
                f"batch index {batch_index} outside the schedule "
                f"({len(self.schedule.batches)} batches)")
        self.batch_index = batch_index


def build_stream(config: StreamConfig):
    """Construct (source, schedule) for a config; file source if configured."""
    if config.feature_file:
        source = load_feature_file(config.feature_file)
    else:
        source = SyntheticBackbone(config)
    return source, build_schedule(config, source)
