"""Run orchestration: the single-pass train/eval loop, ablation sweeps,
multi-seed aggregation, checkpoint/resume, and CSV/JSONL emission.

A run executes, per seed: build the stream; for every batch — spawn an expert
if the policy says so, build the logit mask, take k masked-CE gradient steps
with EMA updates, expand the (adapted) features and fold them into the
router's statistics — then every eval_interval batches solve the router
lazily and measure accuracy on held-out samples of the classes seen so far;
at every session end fill one row of the session accuracy matrix; after the
stream, run the final inference, routing-accuracy comparisons, and the
representation-similarity probe.

Everything stochastic is keyed by (seed, purpose tag, counters), never by a
shared sequential generator, so a checkpoint is just arrays and counters and
resuming reproduces the remainder of the run bit for bit.  Outputs live in
``<outdir>/<run-id>/`` where the run id is a config-hash prefix; repeated
runs of an equal config overwrite the same files with identical bytes
(wall-clock timings go to a separate file outside that contract).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analytic_router import (RouterState, accumulate, grow, new_router_state,
                              route, solve)
from .baselines import (BASELINE_KINDS, BaselineRouter, baseline_finalize,
                        baseline_fit_update, baseline_restore, baseline_route,
                        baseline_snapshot)
from .ensemble import (AGGREGATIONS, ROUTING_MODES, EnsembleConfig,
                       full_inference)
from .errors import ConfigError
from .expansion import ExpandedBatch, RandomExpansion
from .experts import (MASK_KINDS, SPAWN_POLICIES, EmaBank, ExpertAdapter,
                      ExpertPool, Head, LogitMask, build_mask, train_step)
from .metrics import (MetricsLedger, a_auc, a_avg, a_last, accuracy, bwt,
                      f_last, linear_cka, routing_accuracy)
from .stream import StreamConfig, StreamCursor, build_stream

log = logging.getLogger("gclstream")

TAG_ADAPTER = 31
TAG_MASK = 32
TAG_CKA = 33

CHECKPOINT_VERSION = 1

ABLATION_AXES = ("components", "aggregation", "decays", "mask", "routing_alg",
                 "M_sweep", "lambda_sweep", "rd_sweep", "rb_sweep")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Full experiment description; the result is a pure function of this.

    Defaults mirror the reference training setup (M = 10^4 expansion,
    lambda = 10^4, EMA decays 0.9/0.99, 3 GD iterations per batch at lr
    0.005, batch 64, seeds 1-5); use desk_config() for the scaled-down
    synthetic preset the tests and CLI default to.
    """

    stream: StreamConfig = field(default_factory=StreamConfig)
    M: int = 10_000
    activation: str = "relu"
    expansion_seed: int | None = None
    lam: float = 1e4
    ema_decays: tuple = (0.9, 0.99)
    aggregation: str = "softmax_max"
    mask_kind: str = "batch_seen_class"
    routing: str = "ridge"
    spawn_policy: str = "session_aligned"
    spawn_budget: int = 10_000
    lr: float = 0.005
    iters: int = 3
    seeds: tuple = (1, 2, 3, 4, 5)
    outdir: str = "runs"
    accumulate_adapted: bool = True
    reset_head_at_spawn: bool = False
    multi_expert: bool = True
    track_baselines: tuple = ()
    track_oracle: bool = True
    eval_session_matrix: bool = True
    log_predictions: bool = True
    cka_probe: int = 256

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.mask_kind not in MASK_KINDS:
            raise ConfigError(f"unknown mask kind {self.mask_kind!r}")
        if self.routing not in ROUTING_MODES:
            raise ConfigError(f"unknown routing mode {self.routing!r}")
        if self.spawn_policy not in SPAWN_POLICIES:
            raise ConfigError(f"unknown spawn policy {self.spawn_policy!r}")
        for kind in self.track_baselines:
            if kind not in BASELINE_KINDS:
                raise ConfigError(f"unknown baseline kind {kind!r}")
        if self.M < 1 or self.lam <= 0 or self.lr <= 0 or self.iters < 1:
            raise ConfigError("M, lambda, lr must be positive; iters >= 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        self.ema_decays = tuple(float(a) for a in self.ema_decays)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.track_baselines = tuple(self.track_baselines)


def desk_config(**overrides) -> RunConfig:
    """Desk-scale preset: synthetic d=32 stream with a 1024-wide expansion."""
    stream_overrides = overrides.pop("stream", {})
    if isinstance(stream_overrides, StreamConfig):
        stream = stream_overrides
    else:
        stream = StreamConfig(**stream_overrides)
    return RunConfig(stream=stream, M=overrides.pop("M", 1024), **overrides)


def config_to_dict(config: RunConfig) -> dict:
    d = dataclasses.asdict(config)
    d["ema_decays"] = list(config.ema_decays)
    d["seeds"] = list(config.seeds)
    d["track_baselines"] = list(config.track_baselines)
    return d


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    stream = data.pop("stream", {})
    if not isinstance(stream, StreamConfig):
        stream = StreamConfig(**stream)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(stream=stream, **data)


def config_hash(config: RunConfig) -> str:
    """Identity of the run's science; where results land does not matter."""
    content = config_to_dict(config)
    content.pop("outdir")
    blob = json.dumps(content, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def code_hash() -> str:
    """Hash of the package sources, recorded alongside results."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for path in sorted(root.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key=value`` strings (dotted keys reach into the stream)."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = data
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return data


# ---------------------------------------------------------------------------
# per-seed state
# ---------------------------------------------------------------------------

class SeedRunState:
    """Everything one seed's run carries between batches (checkpointable)."""

    def __init__(self, config: RunConfig, seed: int):
        self.config = config
        self.seed = seed
        stream_cfg = replace(config.stream, seed=seed)
        self.source, self.schedule = build_stream(stream_cfg)
        exp_seed = (config.expansion_seed
                    if config.expansion_seed is not None else seed)
        self.expansion = RandomExpansion(self.source.d, config.M, exp_seed,
                                         config.activation)
        self.router = new_router_state(config.M, config.lam, num_experts=1,
                                       seed=exp_seed)
        adapter_rng = np.random.default_rng(
            np.random.SeedSequence([seed, TAG_ADAPTER]))
        self.pool = ExpertPool(self.source.d, self.source.num_classes,
                               config.ema_decays, adapter_rng,
                               reset_head_at_spawn=config.reset_head_at_spawn)
        kinds = set(config.track_baselines)
        if config.routing in BASELINE_KINDS:
            kinds.add(config.routing)
        self.baselines = {
            kind: BaselineRouter(kind, config.M, seed, num_experts=1,
                                 lr=config.lr, iters=config.iters)
            for kind in sorted(kinds)
        }
        self.ledger = MetricsLedger(config.stream.sessions)
        self.seen: set[int] = set()
        self.batch_index = 0
        total = sum(len(ids) for ids in self.source.class_ids().values())
        self.streamed = np.zeros(total, dtype=bool)
        self.predictions_log: list[dict] = []

        # fixed evaluation pools
        hold = [self.schedule.holdout_by_class[c]
                for c in range(self.source.num_classes)]
        self.holdout_ids = np.concatenate(hold) if hold else np.array([], int)
        self.holdout_X = self.source.features(self.holdout_ids)
        self.holdout_y = self.source.labels[self.holdout_ids]
        last = {}
        for i, (_, session, _) in enumerate(self.schedule.batches):
            last[session] = i
        self.session_last_batch = last

    @property
    def cursor(self) -> StreamCursor:
        cur = StreamCursor(self.schedule, self.source)
        cur.skip_to(self.batch_index)
        return cur


def _spawn(state: SeedRunState) -> int:
    new_id = state.pool.spawn()
    if new_id >= state.router.num_experts:
        grow(state.router, new_id + 1)
    for baseline in state.baselines.values():
        if new_id >= baseline.num_experts:
            baseline.register_expert()
    return new_id


def _seen_mask(state: SeedRunState) -> LogitMask:
    values = np.full(state.source.num_classes, -1e30)
    values[sorted(state.seen)] = 0.0
    return LogitMask(values, "seen_class")


def _eval_pool(state: SeedRunState, classes) -> np.ndarray:
    wanted = np.isin(state.holdout_y, sorted(classes))
    return np.nonzero(wanted)[0]


def _infer(state: SeedRunState, rows: np.ndarray, routing: str):
    """Inference on holdout rows with the seen-class mask."""
    config = state.config
    X = state.holdout_X[rows]
    y = state.holdout_y[rows]
    mask = _seen_mask(state)
    router_arg = state.router
    if routing in ("ridge", "oracle"):
        solve(state.router)
    baseline = None
    if routing in BASELINE_KINDS:
        baseline = state.baselines[routing]
        if routing == "kmeans":
            baseline_finalize(baseline)
    return full_inference(
        X, state.expansion, router_arg, state.pool, mask,
        EnsembleConfig(config.aggregation), routing=routing, true_labels=y,
        history=state.pool.trained_classes, baseline=baseline,
    ), y


def _log_predictions(state: SeedRunState, phase: str, step, rows, y, result):
    if not state.config.log_predictions:
        return
    record = {
        "phase": phase,
        "step": step,
        "ids": [int(i) for i in state.holdout_ids[rows]],
        "labels": [int(v) for v in y],
        "predictions": [int(v) for v in result.predictions],
        "selections": [int(v) for v in result.selections],
    }
    state.predictions_log.append(record)


def run_batch(state: SeedRunState, batch) -> None:
    """Train on one batch and fold it into every router's statistics."""
    config = state.config
    X, y, ids, session, is_start = batch

    if state.pool.num_experts == 0 or (
            config.multi_expert and state.pool.should_spawn(
                config.spawn_policy, is_start, config.spawn_budget)):
        _spawn(state)

    if state.streamed[ids].any():
        raise AssertionError("single-pass violation: sample replayed")
    state.streamed[ids] = True

    state.seen.update(int(c) for c in y)
    mask_rng = None
    if config.mask_kind == "random":
        mask_rng = np.random.default_rng(np.random.SeedSequence(
            [state.seed, TAG_MASK, state.batch_index]))
    mask = build_mask(set(int(c) for c in y), state.seen, config.mask_kind,
                      state.source.num_classes, mask_rng)

    bank = state.pool.banks[-1] if config.ema_decays else None
    train_step(state.pool.adapters[-1], state.pool.online, X, y, mask,
               config.lr, config.iters, bank)
    state.pool.observe(y)

    feats = (state.pool.adapters[-1].adapted(X)
             if config.accumulate_adapted else X)
    expanded = ExpandedBatch(state.expansion(feats), state.pool.current)
    accumulate(state.router, expanded)
    for baseline in state.baselines.values():
        baseline_fit_update(baseline, expanded)

    state.batch_index += 1

    if state.batch_index % config.stream.eval_interval == 0:
        rows = _eval_pool(state, state.seen)
        result, y_eval = _infer(state, rows, config.routing)
        acc = accuracy(result.predictions, y_eval)
        state.ledger.record_anytime(acc)
        _log_predictions(state, "anytime",
                         state.batch_index // config.stream.eval_interval,
                         rows, y_eval, result)

    if (config.eval_session_matrix
            and state.session_last_batch[session] == state.batch_index - 1):
        rows = _eval_pool(state, state.seen)
        result, y_eval = _infer(state, rows, config.routing)
        accs = []
        for j in range(session + 1):
            member = np.isin(y_eval, sorted(state.schedule.session_classes[j]))
            accs.append(accuracy(result.predictions[member], y_eval[member]))
        state.ledger.record_session_row(session, accs)
        _log_predictions(state, "session", session, rows, y_eval, result)


def finish_seed(state: SeedRunState) -> dict:
    """Final inference, paired comparisons, CKA probe; returns metric dict."""
    config = state.config
    rows = _eval_pool(state, state.seen)
    result, y_eval = _infer(state, rows, config.routing)
    state.ledger.record_routing(result.selections, y_eval,
                                state.pool.trained_classes)
    _log_predictions(state, "final", None, rows, y_eval, result)

    metrics: dict[str, float] = {}
    R = state.ledger.session_matrix
    try:
        metrics["a_auc"] = a_auc(state.ledger.anytime)
    except ValueError:
        pass
    if config.eval_session_matrix:
        metrics["a_last"] = a_last(R)
        metrics["a_avg"] = a_avg(R)
        metrics["f_last"] = f_last(R)
        if config.stream.sessions >= 2:
            metrics["bwt"] = bwt(R)
    metrics["final_accuracy"] = accuracy(result.predictions, y_eval)
    metrics["routing_accuracy"] = routing_accuracy(
        result.selections, y_eval, state.pool.trained_classes)
    metrics["num_experts"] = float(state.pool.num_experts)

    if config.track_oracle and config.routing != "oracle":
        oracle_result, _ = _infer(state, rows, "oracle")
        metrics["oracle_accuracy"] = accuracy(oracle_result.predictions,
                                              y_eval)
        metrics["oracle_routing_accuracy"] = routing_accuracy(
            oracle_result.selections, y_eval, state.pool.trained_classes)
        metrics["oracle_fallbacks"] = float(oracle_result.oracle_fallbacks)
        if config.eval_session_matrix:
            accs = []
            for j in range(config.stream.sessions):
                member = np.isin(y_eval,
                                 sorted(state.schedule.session_classes[j]))
                accs.append(accuracy(oracle_result.predictions[member],
                                     y_eval[member]))
            metrics["oracle_a_last"] = float(np.mean(accs))
        record = {
            "phase": "oracle",
            "step": None,
            "ids": [int(i) for i in state.holdout_ids[rows]],
            "labels": [int(v) for v in y_eval],
            "predictions": [int(v) for v in oracle_result.predictions],
            "selections": [int(v) for v in oracle_result.selections],
        }
        if config.log_predictions:
            state.predictions_log.append(record)

    for kind in sorted(state.baselines):
        baseline = state.baselines[kind]
        if kind == "kmeans":
            baseline_finalize(baseline)
        selections = baseline_route(baseline, state.holdout_X[rows],
                                    state.expansion)
        metrics[f"routing_accuracy_{kind}"] = routing_accuracy(
            selections, y_eval, state.pool.trained_classes)

    if state.pool.num_experts > 1 and config.cka_probe > 0:
        probe_rng = np.random.default_rng(
            np.random.SeedSequence([state.seed, TAG_CKA]))
        n = min(config.cka_probe, len(state.holdout_X))
        probe = state.holdout_X[
            probe_rng.choice(len(state.holdout_X), size=n, replace=False)]
        residuals = [ad.adapted(probe) - probe for ad in state.pool.adapters]
        pairs = []
        for i in range(state.pool.num_experts):
            for j in range(i + 1, state.pool.num_experts):
                try:
                    value = linear_cka(residuals[i], residuals[j])
                except ValueError:
                    value = float("nan")
                metrics[f"cka_{i}_{j}"] = value
                pairs.append(value)
        if pairs:
            metrics["cka_mean"] = float(np.nanmean(pairs))

    for t, size in enumerate(state.schedule.session_sizes):
        metrics[f"session_size_{t}"] = float(size)
    return metrics


def run_seed(config: RunConfig, seed: int,
             state: SeedRunState | None = None) -> tuple[dict, SeedRunState]:
    """Run one seed start (or checkpoint) to finish."""
    if state is None:
        state = SeedRunState(config, seed)
    cursor = state.cursor
    while True:
        batch = cursor.next_batch()
        if batch is None:
            break
        run_batch(state, batch)
    return finish_seed(state), state


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def checkpoint(state: SeedRunState, path) -> None:
    """Write a lossless batch-boundary snapshot of a seed's run."""
    pool = state.pool
    n_decays = len(pool.decays)
    arrays = {
        "gram": state.router.gram,
        "proto": state.router.proto,
        "online_w": pool.online.weights,
        "online_b": pool.online.bias,
        "streamed": np.packbits(state.streamed),
        "session_matrix": state.ledger.session_matrix,
        "anytime": np.array(state.ledger.anytime, dtype=np.float64),
    }
    if pool.num_experts:
        arrays["adapter_scale"] = np.stack([a.scale for a in pool.adapters])
        arrays["adapter_shift"] = np.stack([a.shift for a in pool.adapters])
        arrays["adapter_frozen"] = np.array(
            [a.frozen for a in pool.adapters], dtype=bool)
        if n_decays:
            arrays["bank_w"] = np.stack(
                [np.stack([h.weights for h in bank.heads])
                 for bank in pool.banks])
            arrays["bank_b"] = np.stack(
                [np.stack([h.bias for h in bank.heads])
                 for bank in pool.banks])
    for kind, baseline in state.baselines.items():
        for key, value in baseline_snapshot(baseline).items():
            arrays[f"baseline_{kind}_{key}"] = value
    meta = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash(state.config),
        "seed": state.seed,
        "batch_index": state.batch_index,
        "samples_seen": state.router.samples_seen,
        "num_experts": pool.num_experts,
        "samples_under_current": pool.samples_under_current,
        "seen": sorted(state.seen),
        "trained_classes": [sorted(s) for s in pool.trained_classes],
        "routing_hits": state.ledger.routing_hits,
        "routing_attempts": state.ledger.routing_attempts,
        "predictions_log": state.predictions_log,
        "streamed_len": int(state.streamed.size),
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta=json.dumps(meta, sort_keys=True), **arrays)


def resume(path, config: RunConfig) -> SeedRunState:
    """Rebuild a SeedRunState from a snapshot; config must hash-match."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        arrays = {k: np.array(v) for k, v in data.items() if k != "meta"}
    if meta["version"] != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint version {meta['version']} != engine checkpoint "
            f"version {CHECKPOINT_VERSION}")
    if meta["config_hash"] != config_hash(config):
        raise ConfigError(
            "checkpoint was written under a different config "
            f"({meta['config_hash'][:12]} != {config_hash(config)[:12]}); "
            "refusing to resume")

    state = SeedRunState(config, int(meta["seed"]))
    state.batch_index = int(meta["batch_index"])
    state.router.gram = arrays["gram"]
    state.router.proto = arrays["proto"]
    state.router.samples_seen = int(meta["samples_seen"])
    state.router.solved = None

    pool = state.pool
    pool.online.weights = arrays["online_w"]
    pool.online.bias = arrays["online_b"]
    for e in range(int(meta["num_experts"])):
        adapter = ExpertAdapter(
            e, arrays["adapter_scale"][e].copy(),
            arrays["adapter_shift"][e].copy())
        if arrays["adapter_frozen"][e]:
            adapter.freeze()
        pool.adapters.append(adapter)
        if pool.decays:
            heads = [Head(arrays["bank_w"][e][j].copy(),
                          arrays["bank_b"][e][j].copy())
                     for j in range(len(pool.decays))]
            pool.banks.append(EmaBank(pool.decays, heads))
        else:
            pool.banks.append(EmaBank([], []))
        pool.trained_classes.append(set(meta["trained_classes"][e]))
    pool.samples_under_current = int(meta["samples_under_current"])
    if pool.num_experts > state.router.proto.shape[1]:
        raise ConfigError("checkpoint expert count exceeds router width")

    state.seen = set(meta["seen"])
    state.streamed = np.unpackbits(
        arrays["streamed"], count=meta["streamed_len"]).astype(bool)
    state.ledger.session_matrix = arrays["session_matrix"]
    state.ledger.anytime = [float(v) for v in arrays["anytime"]]
    state.ledger.routing_hits = int(meta["routing_hits"])
    state.ledger.routing_attempts = int(meta["routing_attempts"])
    state.predictions_log = list(meta["predictions_log"])
    for kind, baseline in state.baselines.items():
        prefix = f"baseline_{kind}_"
        snap = {k[len(prefix):]: v for k, v in arrays.items()
                if k.startswith(prefix)}
        baseline_restore(baseline, snap)
    return state


# ---------------------------------------------------------------------------
# multi-seed runs and emission
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config: RunConfig
    per_seed: dict
    mean: dict
    std: dict
    run_dir: str
    config_hash: str
    code_hash: str
    timing: dict

    def summary(self) -> str:
        keys = [k for k in ("a_auc", "a_last", "routing_accuracy")
                if k in self.mean]
        parts = [f"{k}={self.mean[k]:.4f}±{self.std[k]:.4f}" for k in keys]
        return f"[{Path(self.run_dir).name}] " + " ".join(parts)


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _aggregate(per_seed: dict) -> tuple[dict, dict]:
    common = None
    for metrics in per_seed.values():
        keys = set(metrics)
        common = keys if common is None else common & keys
    mean, std = {}, {}
    first = next(iter(per_seed.values()))
    for key in first:  # preserve insertion order
        if key not in common:
            continue
        values = np.array([per_seed[s][key] for s in per_seed])
        mean[key] = float(np.mean(values))
        std[key] = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return mean, std


def _write_outputs(config: RunConfig, per_seed: dict, states: dict,
                   run_dir: Path, timing: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(config)

    payload = {
        "config": config_to_dict(config),
        "config_hash": chash,
        "code_hash": code_hash(),
        "engine_version": __version__,
    }
    (run_dir / "config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")

    mean, std = _aggregate(per_seed)
    lines = ["seed,metric,value"]
    for seed in config.seeds:
        for key, value in per_seed[seed].items():
            lines.append(f"{seed},{key},{_fmt(value)}")
    for key in mean:
        lines.append(f"mean,{key},{_fmt(mean[key])}")
        lines.append(f"std,{key},{_fmt(std[key])}")
    (run_dir / "metrics.csv").write_text("\n".join(lines) + "\n")

    T = config.stream.sessions
    lines = ["seed,row," + ",".join(f"s{j}" for j in range(T))]
    for seed in config.seeds:
        R = states[seed].ledger.session_matrix
        for i in range(T):
            cells = ",".join(_fmt(R[i, j]) for j in range(T))
            lines.append(f"{seed},{i},{cells}")
    (run_dir / "session_matrix.csv").write_text("\n".join(lines) + "\n")

    lines = ["seed,step,accuracy"]
    for seed in config.seeds:
        for step, acc in enumerate(states[seed].ledger.anytime, start=1):
            lines.append(f"{seed},{step},{_fmt(acc)}")
    (run_dir / "anytime.csv").write_text("\n".join(lines) + "\n")

    with open(run_dir / "predictions.jsonl", "w") as fh:
        for seed in config.seeds:
            state = states[seed]
            meta = {
                "phase": "meta",
                "seed": seed,
                "session_classes": [sorted(s) for s in
                                    state.schedule.session_classes],
                "history": [sorted(s) for s in state.pool.trained_classes],
                "eval_interval": config.stream.eval_interval,
                "sessions": config.stream.sessions,
            }
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for record in state.predictions_log:
                fh.write(json.dumps({"seed": seed, **record},
                                    sort_keys=True) + "\n")

    (run_dir / "timing.json").write_text(
        json.dumps(timing, indent=2, sort_keys=True) + "\n")


def run(config: RunConfig) -> RunResult:
    """Execute every seed and emit the run directory; pure in config."""
    chash = config_hash(config)
    run_dir = Path(config.outdir) / f"run-{chash[:12]}"
    per_seed: dict[int, dict] = {}
    states: dict[int, SeedRunState] = {}
    timing: dict[str, float] = {}
    for seed in config.seeds:
        started = time.perf_counter()
        metrics, state = run_seed(config, seed)
        timing[f"seed_{seed}_s"] = time.perf_counter() - started
        per_seed[seed] = metrics
        states[seed] = state
        log.info("seed %d done in %.2fs", seed, timing[f"seed_{seed}_s"])
    mean, std = _aggregate(per_seed)
    _write_outputs(config, per_seed, states, run_dir, timing)
    return RunResult(config=config, per_seed=per_seed, mean=mean, std=std,
                     run_dir=str(run_dir), config_hash=chash,
                     code_hash=code_hash(), timing=timing)


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

def _component_cells(config: RunConfig):
    """The on/off grid: expert pool x routing x EMA bank."""
    return [
        ("single", replace(config, multi_expert=False, routing="latest",
                           ema_decays=())),
        ("single_ema", replace(config, multi_expert=False, routing="latest")),
        ("multi_latest", replace(config, routing="latest", ema_decays=())),
        ("multi_latest_ema", replace(config, routing="latest")),
        ("multi_ridge", replace(config, routing="ridge", ema_decays=())),
        ("full", replace(config, routing="ridge")),
    ]


def ablate(config: RunConfig, axis: str):
    """Sweep one axis with everything else fixed; emits a combined CSV."""
    if axis not in ABLATION_AXES:
        raise ConfigError(
            f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")
    base_out = Path(config.outdir) / f"ablate_{axis}"
    cells: list[tuple[str, RunConfig]]
    if axis == "components":
        cells = _component_cells(config)
    elif axis == "aggregation":
        cells = [(agg, replace(config, aggregation=agg))
                 for agg in AGGREGATIONS]
    elif axis == "decays":
        banks = [(), (0.9,), (0.99,), (0.999,), (0.9, 0.99),
                 (0.9, 0.99, 0.999)]
        cells = [("online_only" if not b else "+".join(str(a) for a in b),
                  replace(config, ema_decays=b)) for b in banks]
    elif axis == "mask":
        cells = [(kind, replace(config, mask_kind=kind))
                 for kind in MASK_KINDS]
    elif axis == "routing_alg":
        modes = ("ridge", "prototype", "naive_bayes", "kmeans",
                 "trained_shallow", "oracle")
        cells = [(mode, replace(config, routing=mode)) for mode in modes]
    elif axis == "M_sweep":
        cells = [(f"M{m}", replace(config, M=m))
                 for m in (64, 256, 1024, 4096)]
    elif axis == "lambda_sweep":
        cells = [(f"lam{lam:g}", replace(config, lam=lam))
                 for lam in (1e2, 1e3, 1e4, 1e5)]
    elif axis == "rd_sweep":
        cells = [(f"rd{r:g}",
                  replace(config, stream=replace(config.stream,
                                                 disjoint_ratio=r)))
                 for r in (0.0, 0.5, 1.0)]
    else:
        cells = [(f"rb{r:g}",
                  replace(config, stream=replace(config.stream,
                                                 blurry_ratio=r)))
                 for r in (0.0, 0.1, 0.3, 0.5)]

    results = []
    lines = ["cell,seed,metric,value"]
    for name, cell_config in cells:
        cell_config = replace(cell_config, outdir=str(base_out))
        result = run(cell_config)
        results.append((name, result))
        for seed in cell_config.seeds:
            for key, value in result.per_seed[seed].items():
                lines.append(f"{name},{seed},{key},{_fmt(value)}")
        for key in result.mean:
            lines.append(f"{name},mean,{key},{_fmt(result.mean[key])}")
            lines.append(f"{name},std,{key},{_fmt(result.std[key])}")
        log.info("ablation %s cell %s: %s", axis, name, result.summary())
    base_out.mkdir(parents=True, exist_ok=True)
    (base_out / f"ablate_{axis}.csv").write_text("\n".join(lines) + "\n")
    return results
