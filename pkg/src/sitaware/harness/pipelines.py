"""Active training, passive annotation and training, evaluation."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np

from ..dynamics.buffer import ReplayBuffer
from ..dynamics.ensemble import EnsembleModel, train_ensemble
from ..dynamics.features import PROCESSED_DIM, TARGET_DIM, situation_vector
from ..errors import ConfigError, InputError
from ..mppi import MPPIController
from ..situations import export_means, load_library, save_library
from .config import ExperimentConfig, save_config
from .io import (DETECTOR_COLUMNS, GROUND_TRUTH_COLUMNS, REWARD_COLUMNS, CsvTrace, read_csv, step_columns,
                 write_json)
from .loop import (COLLECT_PHASE, EVAL_PHASE, HELDOUT_PHASE, TRAIN_PHASE, EpisodeLog, annotate_logs,
                   buffer_from, episode_seed, exploration_policy, run_episode, sa_dim, write_episode_traces)
from .metrics import (EvalReport, control_inconsistency, detection_metrics, gaussian_nll, merge_detection,
                      per_regime_errors, time_to_waypoint_stats)
from .sa import RunLabeler, SituationAwareness

log = logging.getLogger(__name__)


def _seed(cfg: ExperimentConfig, *parts: int) -> list[int]:
    return [cfg.seed, *parts]


def mppi_policy(model, cfg: ExperimentConfig, episode: int):
    ctrl = MPPIController(model, cfg.mppi)

    def act(state, symbol, step, goal):
        a, res = ctrl.act(state, symbol, goal, cfg.obstacles, seed=_seed(cfg, 11, episode, step))
        return a, res.expected_cost

    return act


class Traces:
    """The CSV files of one run directory."""

    def __init__(self, out: Path, action_dim: int, prefix: str = ""):
        self.detector = CsvTrace(out / f"{prefix}detector.csv", DETECTOR_COLUMNS)
        self.steps = CsvTrace(out / f"{prefix}steps.csv", step_columns(action_dim, TARGET_DIM))
        self.ground_truth = CsvTrace(out / f"{prefix}ground_truth.csv", GROUND_TRUTH_COLUMNS)
        self.rewards = CsvTrace(out / f"{prefix}rewards.csv", REWARD_COLUMNS)

    def write(self, log: EpisodeLog) -> None:
        write_episode_traces(log, self.detector, self.steps, self.ground_truth, self.rewards)


def _one_step(logs) -> dict:
    logs = [l for l in logs if l.predicted]
    if not logs:
        return {}
    mean = np.concatenate([np.stack(l.predicted) for l in logs])
    var = np.concatenate([np.stack(l.predicted_var) for l in logs])
    real = np.concatenate([np.stack(l.realized) for l in logs])
    regimes = np.concatenate([l.regimes for l in logs])
    return _one_step_arrays(mean, var, real, regimes)


def _one_step_arrays(mean, var, real, regimes) -> dict:
    return {"per_regime": per_regime_errors(mean, var, real, regimes),
            "one_step_mse": float(np.mean((mean - real) ** 2)),
            "one_step_nll": float(np.mean(gaussian_nll(mean, var, real)))}


def report_from_logs(task_logs: list[EpisodeLog], heldout_logs: list[EpisodeLog] | None = None) -> EvalReport:
    """Metrics of a set of episodes.

    One-step errors use ``heldout_logs`` when given, else the task episodes.
    Control inconsistency compares predicted and realized processed-state
    deltas on the task episodes.
    """
    rep = EvalReport(
        episode_rewards=[l.reward for l in task_logs],
        waypoints_reached=[l.waypoints for l in task_logs],
        time_to_waypoint=time_to_waypoint_stats([t for l in task_logs for t in l.waypoint_times]),
        detection=merge_detection(
            detection_metrics(l.changepoints, [s for s, _, _ in l.switch_log], l.steps) for l in task_logs
        ).to_dict(),
    )
    one = _one_step(heldout_logs if heldout_logs is not None else task_logs)
    if one:
        rep.per_regime, rep.one_step_mse, rep.one_step_nll = one["per_regime"], one["one_step_mse"], one["one_step_nll"]
    with_pred = [l for l in task_logs if l.predicted]
    if with_pred:
        rep.control_inconsistency = control_inconsistency(
            np.concatenate([np.stack(l.predicted)[:, :PROCESSED_DIM] for l in with_pred]),
            np.concatenate([np.stack(l.realized)[:, :PROCESSED_DIM] for l in with_pred]))
    return rep


def _trace_arrays(steps: dict, prefix: str) -> np.ndarray:
    return np.stack([steps[f"{prefix}{i}"] for i in range(TARGET_DIM)], axis=1)


def report_from_traces(out_dir, prefix: str = "", heldout_prefix: str | None = None) -> EvalReport:
    """Recompute an :class:`EvalReport` from the CSV traces of a run directory."""
    out = Path(out_dir)
    steps = read_csv(out / f"{prefix}steps.csv")
    det = read_csv(out / f"{prefix}detector.csv")
    gt = read_csv(out / f"{prefix}ground_truth.csv")
    rew = read_csv(out / f"{prefix}rewards.csv")
    episodes = rew["episode"].astype(int)
    parts, times = [], []
    for e, n in zip(episodes, rew["steps"].astype(int)):
        cps = det["step"][(det["episode"] == e) & (det["changepoint"] == 1)]
        sw = gt["step"][gt["episode"] == e]
        parts.append(detection_metrics(cps, sw, n))
        hits = steps["step"][(steps["episode"] == e) & (steps["reward"] > 0)].astype(int)
        marks = np.concatenate(([-1], hits))
        times.extend(np.diff(marks).tolist())
    rep = EvalReport(episode_rewards=rew["reward"].tolist(), waypoints_reached=rew["waypoints"].astype(int).tolist(),
                     time_to_waypoint=time_to_waypoint_stats(times), detection=merge_detection(parts).to_dict())
    mean, var, real = (_trace_arrays(steps, p) for p in ("pred", "var", "real"))
    have = ~np.isnan(mean).any(axis=1)
    src = steps
    if heldout_prefix is not None:
        src = read_csv(out / f"{heldout_prefix}steps.csv")
    hm, hv, hr = (_trace_arrays(src, p) for p in ("pred", "var", "real"))
    hh = ~np.isnan(hm).any(axis=1)
    if hh.any():
        one = _one_step_arrays(hm[hh], hv[hh], hr[hh], src["regime"][hh].astype(int))
        rep.per_regime, rep.one_step_mse, rep.one_step_nll = one["per_regime"], one["one_step_mse"], one["one_step_nll"]
    if have.any():
        rep.control_inconsistency = control_inconsistency(mean[have, :PROCESSED_DIM], real[have, :PROCESSED_DIM])
    return rep


def _prepare_out(cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    return out


def _train(buffer: ReplayBuffer, cfg: ExperimentConfig, use_symbol: bool, *parts: int) -> EnsembleModel:
    mcfg = dataclasses.replace(cfg.model, use_symbol=use_symbol)
    seed = int(np.random.SeedSequence(_seed(cfg, 13, int(use_symbol), *parts)).generate_state(1)[0])
    return train_ensemble(buffer, mcfg, seed=seed)


def run_active(cfg: ExperimentConfig, out_dir=None) -> EvalReport:
    """Warm-up with the exploration controller, then per episode: retrain from scratch and act with MPPI.

    The SA stack runs in training mode on every transition; each episode's
    transitions enter the buffer labelled with their run's situation.
    Buffer, library, model and traces are written after every episode.
    """
    if cfg.mode != "active":
        raise ConfigError(f"run_active needs mode 'active', got {cfg.mode!r}")
    out = _prepare_out(cfg, out_dir)
    preset = cfg.preset
    sa = SituationAwareness.fresh(sa_dim(preset), cfg.sa, cfg.seed)
    traces = Traces(out, preset.action_dim)
    buffer = ReplayBuffer()

    def persist(log: EpisodeLog, model: EnsembleModel | None) -> None:
        buffer.extend(annotate_logs([log], sa, RunLabeler()))
        traces.write(log)
        buffer.write_jsonl(out / "buffer.jsonl")
        save_library(sa.library, out / "library.json")
        export_means(sa.library, out / "situation_means.csv")
        if model is not None:
            model.save(out / "model.npz")

    warm = run_episode(preset, episode_seed(cfg.seed, TRAIN_PHASE, 0), 0,
                       exploration_policy(preset, episode_seed(cfg.seed, TRAIN_PHASE + 100, 0)),
                       sa, max_steps=cfg.warmup_steps, explore=True)
    persist(warm, None)
    logs = [warm]
    for e in range(1, cfg.budget.episodes + 1):
        model = _train(buffer, cfg, cfg.model.use_symbol, e)
        ep = run_episode(preset, episode_seed(cfg.seed, TRAIN_PHASE, e), e, mppi_policy(model, cfg, e), sa, model)
        persist(ep, model)
        logs.append(ep)
        log.info("episode %d: reward %.0f, %d situations", e, ep.reward, len(sa.library))
    report = report_from_logs(logs)
    write_json(out / "report.json", report.to_dict())
    return report


def collect(cfg: ExperimentConfig, out_dir=None) -> ReplayBuffer:
    """Exploration episodes without symbols: ``dataset.jsonl`` plus ground truth."""
    out = _prepare_out(cfg, out_dir)
    preset = cfg.preset
    gt = CsvTrace(out / "ground_truth.csv", GROUND_TRUTH_COLUMNS)
    buffer = ReplayBuffer()
    for e in range(cfg.budget.collect_episodes):
        lg = run_episode(preset, episode_seed(cfg.seed, COLLECT_PHASE, e), e,
                         exploration_policy(preset, episode_seed(cfg.seed, COLLECT_PHASE + 100, e)), explore=True)
        buffer.extend(lg.transitions)
        write_episode_traces(lg, None, None, gt, None)
    buffer.write_jsonl(out / "dataset.jsonl")
    return buffer


def annotate(dataset: ReplayBuffer, cfg: ExperimentConfig, out_dir=None):
    """Stream ``dataset`` in order through a training-mode SA stack.

    Returns ``(annotated buffer, library)``.  Episode boundaries follow the
    records' episode field.
    """
    if len(dataset) == 0:
        raise InputError("dataset is empty")
    out = _prepare_out(cfg, out_dir) if out_dir is not None else None
    dim = dataset[0].state.size
    sa = SituationAwareness.fresh(situation_vector(np.zeros(dim), dataset[0].action, np.zeros(dim)).size,
                                  cfg.sa, cfg.seed)
    logs: list[EpisodeLog] = []
    current = None
    for tr in dataset:
        if current is None or tr.episode != current.episode:
            if current is not None:
                current.sa_steps.extend(sa.flush())
            current = EpisodeLog(tr.episode)
            logs.append(current)
            sa.reset_episode()
        current.transitions.append(tr.with_symbol(None))
        current.sa_steps.extend(sa.observe(tr.state, tr.action, tr.next_state))
    current.sa_steps.extend(sa.flush())
    annotated = buffer_from(annotate_logs(logs, sa, RunLabeler()))
    if out is not None:
        det = CsvTrace(out / "detector.csv", DETECTOR_COLUMNS)
        for lg in logs:
            write_episode_traces(lg, det, None, None, None)
        annotated.write_jsonl(out / "buffer.jsonl")
        save_library(sa.library, out / "library.json")
        export_means(sa.library, out / "situation_means.csv")
    return annotated, sa.library


def train_passive(dataset: ReplayBuffer, cfg: ExperimentConfig, out_dir=None):
    """Annotate, then train the symbol-aware model and, if configured, its stripped twin.

    Returns ``(model, baseline or None, annotated buffer, library)``.
    """
    annotated, library = annotate(dataset, cfg, out_dir)
    model = _train(annotated, cfg, True)
    baseline = _train(annotated, cfg, False) if cfg.baseline else None
    if out_dir is not None:
        out = Path(out_dir)
        model.save(out / "model.npz")
        if baseline is not None:
            baseline.save(out / "baseline.npz")
    return model, baseline, annotated, library


def evaluate(model: EnsembleModel, library, cfg: ExperimentConfig, out_dir=None, prefix: str = "") -> EvalReport:
    """Frozen model, testing-mode library: MPPI task episodes plus held-out exploration episodes.

    Held-out episodes use fixed seeds, so every model is scored on the same
    transitions.  Nothing is written back to the library.
    """
    preset = cfg.preset
    lib = library.with_mode("testing")
    if len(lib) == 0:
        raise InputError("evaluation needs a nonempty situation library")
    out = _prepare_out(cfg, out_dir) if out_dir is not None else None
    traces = Traces(out, preset.action_dim, prefix) if out is not None else None
    held_trace = CsvTrace(out / f"{prefix}heldout_steps.csv", step_columns(preset.action_dim, TARGET_DIM)) \
        if out is not None else None

    task_logs, held_logs = [], []
    for e in range(cfg.budget.eval_episodes):
        sa = SituationAwareness(lib, cfg.sa, cfg.seed)
        lg = run_episode(preset, episode_seed(cfg.seed, EVAL_PHASE, e), e, mppi_policy(model, cfg, 1000 + e), sa, model)
        task_logs.append(lg)
        if traces is not None:
            traces.write(lg)
        sa = SituationAwareness(lib, cfg.sa, cfg.seed)
        hl = run_episode(preset, episode_seed(cfg.seed, HELDOUT_PHASE, e), e,
                         exploration_policy(preset, episode_seed(cfg.seed, HELDOUT_PHASE + 100, e)), sa, model,
                         explore=True)
        held_logs.append(hl)
        if held_trace is not None:
            write_episode_traces(hl, None, held_trace, None, None)
    report = report_from_logs(task_logs, held_logs)
    if out is not None:
        write_json(out / f"{prefix}report.json", report.to_dict())
    return report


def evaluate_paths(model_path, library_path, cfg: ExperimentConfig, out_dir=None,
                   baseline_path=None) -> dict[str, EvalReport]:
    """Load artifacts and evaluate; the baseline, when given, is scored on the same episodes."""
    model = EnsembleModel.load(model_path)
    library = load_library(library_path)
    reports = {"model": evaluate(model, library, cfg, out_dir)}
    if baseline_path is not None:
        reports["baseline"] = evaluate(EnsembleModel.load(baseline_path), library, cfg, out_dir, prefix="baseline_")
    return reports
