"""Seeded training loops with metric logging, checkpoints, and diagnostics.

One batch index drives everything reproducible about a step: the sampling
RNG stream, the metric rows, and the checkpoint contents.  Resuming from a
checkpoint therefore replays the exact run that would have happened
without the interruption.

Metric CSV rows contain only seed-determined values; wall-clock time stays
in the in-memory records and the run manifest.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, build_env, build_policy, config_to_dict
from .evaluation import (
    SampleWindow,
    exact_target,
    log_marginals_of,
    pearson_log_correlation,
    sequence_test_states,
    spearman_correlation,
    terminal_log_marginals,
)
from .exceptions import ConfigError, NonFiniteLossError
from .nn import Adam
from .objectives import batch_loss
from .policies import EdgeFlowPolicy
from .sampling import (
    STREAM_DATA,
    STREAM_DIAGNOSTICS,
    batch_rng,
    sample_batch,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRIC_COLUMNS = (
    "step", "trajectories_seen", "l1", "modes", "distinct_states",
    "spearman", "pearson", "loss", "log_z",
)

__all__ = [
    "MetricRecord",
    "TrainingMonitor",
    "TrainResult",
    "train",
    "graddiag_run",
    "evaluate_policy",
    "held_out_correlations",
    "save_checkpoint",
    "load_checkpoint",
    "write_metrics_csv",
    "write_similarity_csvs",
]


@dataclass
class MetricRecord:
    """One evaluation row; optional fields are None where not computable."""

    step: int
    trajectories_seen: int
    loss: float | None
    l1: float | None
    modes: int
    distinct_states: int
    spearman: float | None
    pearson: float | None
    log_z: float | None
    wall_time: float = 0.0

    def csv_row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(v) if isinstance(v, float) else str(v)
        return [fmt(getattr(self, c)) for c in METRIC_COLUMNS]


class TrainingMonitor:
    """Sliding sample window plus cumulative distinct-state and mode sets."""

    def __init__(self, env, window_capacity: int):
        self.env = env
        self.window = SampleWindow(window_capacity)
        self.distinct: set[int] = set()
        self.mode_ids: set = set()

    def update(self, trajectories) -> None:
        env = self.env
        for t in trajectories:
            x = t.last_state
            self.window.add(x)
            self.distinct.add(env.state_index(x))
            mode = env.mode_id(x)
            if mode is not None:
                self.mode_ids.add(mode)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = self.window.state_arrays(self.env)
        out["visits/distinct"] = np.asarray(sorted(self.distinct), dtype=np.int64)
        return out

    def load_state_arrays(self, arrays) -> None:
        env = self.env
        self.window.load_state_arrays(arrays, env, env.state_from_index)
        self.distinct = {int(i) for i in arrays["visits/distinct"]}
        self.mode_ids = set()
        for i in self.distinct:
            mode = env.mode_id(env.state_from_index(i))
            if mode is not None:
                self.mode_ids.add(mode)


@dataclass
class TrainResult:
    config: ExperimentConfig
    env: object
    policy: object
    monitor: TrainingMonitor
    records: list[MetricRecord]
    metrics_path: Path | None
    checkpoint_path: Path | None
    run_path: Path | None
    skipped_steps: int
    nonfinite_batches: int
    similarity_rows: list[dict] = dataclasses.field(default_factory=list)
    similarity_paths: list[Path] = dataclasses.field(default_factory=list)


def _log_z_estimate(policy) -> float | None:
    if isinstance(policy, EdgeFlowPolicy):
        return policy.log_partition()
    if hasattr(policy, "log_z"):
        return float(policy.log_z.data)
    return None


def evaluate_policy(policy, monitor: TrainingMonitor | None, target,
                    correlations: bool, step: int, trajectories_seen: int,
                    loss: float | None, wall_time: float = 0.0) -> MetricRecord:
    """Assemble one metric record from the current policy and visit history."""
    l1 = spearman = pearson = None
    if target is not None and monitor is not None and len(monitor.window) > 0:
        l1 = monitor.window.l1_to(target)
    if target is not None and correlations:
        marginals = terminal_log_marginals(policy)
        log_p = np.asarray([marginals[s] for s in target.states])
        if np.isfinite(log_p).all():
            spearman = spearman_correlation(log_p, target.log_rewards)
            pearson = pearson_log_correlation(log_p, target.log_rewards)
    return MetricRecord(
        step=step,
        trajectories_seen=trajectories_seen,
        loss=loss,
        l1=l1,
        modes=len(monitor.mode_ids) if monitor else 0,
        distinct_states=len(monitor.distinct) if monitor else 0,
        spearman=spearman,
        pearson=pearson,
        log_z=_log_z_estimate(policy),
        wall_time=wall_time,
    )


def held_out_correlations(policy, config: ExperimentConfig) -> tuple[float, float]:
    """Spearman and Pearson of log-marginals vs log-rewards on a seeded test set.

    Uses the exact enumeration when the environment allows it, otherwise a
    held-out sample of terminal states (tree environments).
    """
    env = policy.env
    if env.enumerable:
        target = exact_target(env)
        marginals = terminal_log_marginals(policy)
        log_p = np.asarray([marginals[s] for s in target.states])
        log_r = target.log_rewards
    else:
        rng = batch_rng(config.seed, 0, STREAM_DATA)
        states = sequence_test_states(env, config.eval.test_set_size, rng)
        log_p = log_marginals_of(policy, states)
        log_r = np.asarray([env.log_reward(s) for s in states])
    return spearman_correlation(log_p, log_r), pearson_log_correlation(log_p, log_r)


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------
def save_checkpoint(path, policy, adam: Adam | None, monitor: TrainingMonitor | None,
                    batch_index: int, nonfinite_batches: int = 0) -> Path:
    """Versioned npz archive of parameters, moments, window, and visit sets."""
    arrays = {
        "meta/format_version": np.asarray([CHECKPOINT_VERSION], dtype=np.int64),
        "meta/batch_index": np.asarray([batch_index], dtype=np.int64),
        "meta/nonfinite_batches": np.asarray([nonfinite_batches], dtype=np.int64),
    }
    arrays.update(policy.save_arrays())
    if adam is not None:
        arrays.update(adam.state_arrays())
    if monitor is not None:
        arrays.update(monitor.state_arrays())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: np.array(data[k]) for k in data.files}
    version = int(arrays.get("meta/format_version", [0])[0])
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint format version {version}")
    return arrays


# ----------------------------------------------------------------------
# CSV output
# ----------------------------------------------------------------------
def write_metrics_csv(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for r in records:
            writer.writerow(r.csv_row())
    return path


def write_similarity_csvs(rows, out_dir) -> list[Path]:
    """One CSV per objective pair, covering all iterations and flow sources."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_pair: dict[str, list[dict]] = {}
    for row in rows:
        by_pair.setdefault(row["objective_pair"], []).append(row)
    paths = []
    for pair in sorted(by_pair):
        path = out_dir / f"similarity_{pair}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective_pair", "flow_source", "k", "mean_cosine"])
            for row in by_pair[pair]:
                writer.writerow([row["iteration"], row["objective_pair"],
                                 row["flow_source"], row["k"], repr(row["mean_cosine"])])
        paths.append(path)
    return paths


def _write_run_manifest(out_dir: Path, config: ExperimentConfig, extra: dict) -> Path:
    manifest = {
        "format_version": 1,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "config": config_to_dict(config),
        "seed": config.seed,
    }
    manifest.update(extra)
    path = out_dir / "run.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ----------------------------------------------------------------------
# training loops
# ----------------------------------------------------------------------
def _prepare(config: ExperimentConfig, resume_from=None, env=None):
    config.validate()
    if env is None:
        env = build_env(config.env)
    policy = build_policy(config, env)
    adam = Adam(policy.param_groups(config.optimizer.learning_rate,
                                    config.optimizer.z_lr_multiplier))
    monitor = TrainingMonitor(env, config.eval.window)
    start_batch = 0
    nonfinite = 0
    if resume_from is not None:
        arrays = load_checkpoint(resume_from)
        policy.load_arrays(arrays)
        adam.load_state_arrays(arrays)
        monitor.load_state_arrays(arrays)
        start_batch = int(arrays["meta/batch_index"][0])
        nonfinite = int(arrays["meta/nonfinite_batches"][0])
    return env, policy, adam, monitor, start_batch, nonfinite


def train(config: ExperimentConfig, resume_from=None,
          diagnostics_hook=None, env=None) -> TrainResult:
    """Run the sample/loss/step loop described by the config.

    ``diagnostics_hook(batch_index, policy)``, when given, is called after
    the optimizer step on every diagnostics-interval boundary; its rows are
    collected into the result (the graddiag entry point uses this).  A
    prebuilt ``env`` instance overrides the config's environment block.
    """
    started = time.monotonic()
    env, policy, adam, monitor, start_batch, nonfinite = _prepare(
        config, resume_from, env=env)
    opt = config.optimizer
    n_batches = opt.total_trajectories // opt.batch_size
    exploration = config.exploration.build()
    target = exact_target(env) if env.enumerable else None
    correlations = config.eval.correlations and env.enumerable

    out_dir = Path(config.out_dir) if config.out_dir else None
    run_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        run_path = _write_run_manifest(out_dir, config, {
            "status": "running",
            "resumed_from": str(resume_from) if resume_from else None,
        })

    records: list[MetricRecord] = []
    similarity_rows: list[dict] = []
    checkpoint_path = None
    diag_interval = config.diagnostics.interval

    for b in range(start_batch, n_batches):
        rng = batch_rng(config.seed, b)
        trajectories = sample_batch(policy, opt.batch_size, rng, exploration)
        loss_value = None
        try:
            loss = batch_loss(
                policy, trajectories, config.objective.kind,
                lam=config.objective.lam, l_max=config.objective.l_max,
                scope=config.objective.scope, fm_epsilon=config.objective.fm_epsilon,
            )
            loss_value = float(loss.data)
            adam.zero_grad()
            loss.backward()
            adam.step()
        except NonFiniteLossError as exc:
            nonfinite += 1
            logger.warning("batch %d: skipped non-finite loss (%s)", b, exc)
        monitor.update(trajectories)
        step = b + 1
        if step % config.eval.interval == 0 or step == n_batches:
            record = evaluate_policy(
                policy, monitor, target, correlations, step,
                step * opt.batch_size, loss_value, time.monotonic() - started,
            )
            records.append(record)
            logger.info(
                "step %d/%d loss=%.3g l1=%s modes=%d",
                step, n_batches, loss_value if loss_value is not None else float("nan"),
                f"{record.l1:.4f}" if record.l1 is not None else "-", record.modes,
            )
        if diagnostics_hook is not None and step % diag_interval == 0:
            similarity_rows.extend(diagnostics_hook(step, policy))
        if (out_dir is not None and config.eval.checkpoint_interval
                and step % config.eval.checkpoint_interval == 0 and step != n_batches):
            save_checkpoint(out_dir / f"checkpoint_{step:08d}.npz",
                            policy, adam, monitor, step, nonfinite)

    metrics_path = None
    if out_dir is not None:
        checkpoint_path = save_checkpoint(out_dir / "checkpoint_final.npz",
                                          policy, adam, monitor, n_batches, nonfinite)
        metrics_path = write_metrics_csv(records, out_dir / "metrics.csv")
        final = records[-1] if records else None
        run_path = _write_run_manifest(out_dir, config, {
            "status": "finished",
            "resumed_from": str(resume_from) if resume_from else None,
            "wall_time_s": time.monotonic() - started,
            "batches": n_batches,
            "skipped_steps": adam.skipped_steps,
            "nonfinite_batches": nonfinite,
            "final_metrics": dataclasses.asdict(final) if final else None,
            "checkpoint": checkpoint_path.name,
        })
    return TrainResult(
        config=config, env=env, policy=policy, monitor=monitor, records=records,
        metrics_path=metrics_path, checkpoint_path=checkpoint_path, run_path=run_path,
        skipped_steps=adam.skipped_steps, nonfinite_batches=nonfinite,
        similarity_rows=similarity_rows,
    )


def graddiag_run(config: ExperimentConfig) -> TrainResult:
    """Train per the config and record similarity curves on a fixed schedule.

    Requires a tabular parameterization on an enumerable environment; the
    diagnostic batch is sampled on-policy from a dedicated RNG stream, so
    the training trajectory stream is untouched.
    """
    from .diagnostics import similarity_records

    config.validate()
    if config.params.kind != "tabular":
        raise ConfigError("gradient diagnostics require the tabular parameterization")
    diag = config.diagnostics

    def hook(step: int, policy) -> list[dict]:
        rng = batch_rng(config.seed, step, STREAM_DIAGNOSTICS)
        trajectories = sample_batch(policy, diag.batch, rng)
        logger.info("diagnostics at step %d", step)
        return similarity_records(
            policy, trajectories, lam=config.objective.lam,
            l_max=config.objective.l_max, iteration=step,
            flow_sources=diag.flow_sources,
        )

    result = train(config, diagnostics_hook=hook)
    if config.out_dir:
        result.similarity_paths = write_similarity_csvs(
            result.similarity_rows, Path(config.out_dir))
    return result
