"""Metrics, persistence, the SA stack and the three pipelines."""

import dataclasses
import hashlib
import math

import numpy as np
import pytest
from scipy import stats as sps

from sitaware.bocd import StepDecision
from sitaware.dynamics.buffer import ReplayBuffer, Transition
from sitaware.dynamics.ensemble import EnsembleConfig, EnsembleModel
from sitaware.envs.pointmass import pointmass_wind_step
from sitaware.envs.presets import environment, wind
from sitaware.errors import ConfigError, InputError, NotFoundError, ParseError
from sitaware.harness.config import (ExperimentConfig, SAConfig, config_from_dict, default_config,
                                     load_config, save_config)
from sitaware.harness.io import CsvTrace, read_csv, read_stream_csv
from sitaware.harness.loop import exploration_policy
from sitaware.harness.metrics import (EvalReport, control_inconsistency, detection_metrics, gaussian_nll,
                                      merge_detection, per_regime_errors, time_to_waypoint_stats)
from sitaware.harness.pipelines import (annotate, evaluate, evaluate_paths, report_from_traces, run_active,
                                        train_passive)
from sitaware.harness.sa import RunLabeler, SAStep, SituationAwareness
from sitaware.mppi import MPPIConfig
from sitaware.situations import load_library, new_library
from sitaware.stats import GaussianParams


class TestDetectionMetrics:
    def test_delay_and_false_alarm(self):
        m = detection_metrics([110, 300], [100], 500)
        assert (m.switches, m.detected, m.delays, m.false_alarms) == (1, 1, [10], 1)
        assert m.false_alarms_per_500 == 1.0

    def test_multiple_decisions_in_window_count_once(self):
        m = detection_metrics([100, 105, 125], [100], 400)
        assert m.detected == 1 and m.delays == [0] and m.false_alarms == 0

    def test_window_edge(self):
        assert detection_metrics([125], [100], 400).detected == 1
        m = detection_metrics([126, 99], [100], 400)
        assert m.detected == 0 and m.false_alarms == 2

    def test_no_switches(self):
        m = detection_metrics([], [], 100)
        assert math.isnan(m.detection_rate) and m.false_alarms == 0

    def test_merge(self):
        m = merge_detection([detection_metrics([110], [100], 200), detection_metrics([50], [150], 300)])
        assert (m.switches, m.detected, m.delays, m.false_alarms, m.steps) == (2, 1, [10], 1, 500)
        assert m.detection_rate == 0.5


class TestModelMetrics:
    def test_perfect_prediction(self):
        d = np.random.default_rng(0).normal(size=(20, 5))
        assert control_inconsistency(d, d) == 0.0

    def test_constant_prediction_second_moment(self):
        d = np.random.default_rng(1).normal(size=(50, 4))
        c = np.full_like(d, 0.3)
        assert control_inconsistency(c, d) == pytest.approx(np.mean((d - 0.3) ** 2), rel=1e-15)

    def test_errors(self):
        with pytest.raises(InputError):
            control_inconsistency(np.zeros((0, 3)), np.zeros((0, 3)))
        with pytest.raises(InputError):
            control_inconsistency(np.zeros((2, 3)), np.zeros((3, 3)))

    def test_gaussian_nll_oracle(self):
        rng = np.random.default_rng(2)
        mean, var, y = rng.normal(size=(6, 3)), rng.uniform(0.1, 2.0, (6, 3)), rng.normal(size=(6, 3))
        expect = -sps.norm.logpdf(y, mean, np.sqrt(var)).sum(axis=1)
        np.testing.assert_allclose(gaussian_nll(mean, var, y), expect, rtol=1e-13)

    def test_per_regime(self):
        mean = np.zeros((4, 1))
        target = np.array([[1.0], [1.0], [2.0], [0.0]])
        out = per_regime_errors(mean, np.ones((4, 1)), target, [0, 0, 1, 1])
        assert out[0]["count"] == 2 and out[0]["mse"] == 1.0 and out[1]["mse"] == 2.0

    def test_time_to_waypoint(self):
        s = time_to_waypoint_stats([3, 5, 10])
        assert s == {"count": 3, "mean": 6.0, "median": 5.0, "max": 10.0}
        assert time_to_waypoint_stats([])["count"] == 0

    def test_report_json_has_no_nan(self):
        d = EvalReport().to_dict()
        assert d["one_step_mse"] is None and d["mean_reward"] is None


class TestIO:
    def test_float_round_trip_is_exact(self, tmp_path):
        vals = np.random.default_rng(3).normal(size=50) * 10.0 ** np.arange(-25, 25)
        tr = CsvTrace(tmp_path / "t.csv", ["i", "v", "b", "missing"])
        for i, v in enumerate(vals):
            tr.add(i, v, i % 2 == 0, None)
        tr.flush()
        back = read_csv(tmp_path / "t.csv")
        np.testing.assert_array_equal(back["v"], vals)
        assert np.all(np.isnan(back["missing"])) and back["b"][0] == 1.0

    def test_row_width(self, tmp_path):
        with pytest.raises(ValueError):
            CsvTrace(tmp_path / "t.csv", ["a", "b"]).add(1)

    def test_read_errors(self, tmp_path):
        with pytest.raises(NotFoundError):
            read_csv(tmp_path / "none.csv")
        (tmp_path / "bad.csv").write_text("a,b\n1,2\n3\n")
        with pytest.raises(ParseError, match="line 3"):
            read_csv(tmp_path / "bad.csv")

    def test_stream_header_is_optional(self, tmp_path):
        (tmp_path / "a.csv").write_text("x,y\n1,2\n3,4\n")
        (tmp_path / "b.csv").write_text("1,2\n3,4\n")
        np.testing.assert_array_equal(read_stream_csv(tmp_path / "a.csv"), read_stream_csv(tmp_path / "b.csv"))


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = default_config("ground-desk")
        save_config(cfg, tmp_path / "c.yaml")
        assert load_config(tmp_path / "c.yaml") == cfg

    @pytest.mark.parametrize("raw", [
        {"bogus": 1}, {"sa": {"lambda": 3}}, {"env": "moon"}, {"seed": True}, {"seed": "1"},
        {"mode": "online"}, {"sa": {"hazard_lambda": 1.0}}, {"obstacles": [[1.0, 2.0, 3.0]]},
    ])
    def test_invalid(self, raw):
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_bounds_follow_environment(self):
        cfg = config_from_dict({"env": "wind-desk"})
        assert cfg.mppi.action_low == (-3.0, -3.0, -3.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(NotFoundError):
            load_config(tmp_path / "none.yaml")


def sa_step(step, changepoint, symbol, x=None):
    dec = StepDecision(changepoint, 0.0, 0.0, 0)
    return SAStep(step, np.zeros(2) if x is None else x, symbol, 0, dec, False, 0.0)


class TestRunLabeler:
    def test_run_takes_symbol_identified_at_close(self):
        lab = RunLabeler()
        for t, (cp, sym) in enumerate([(False, 1.0), (False, 1.0), (True, 2.0), (False, 2.0)]):
            lab.add(sa_step(t, cp, sym))
        lab.end_episode(3.0)
        assert lab.finish(new_library(2, 5.0, 2)) == [2.0, 2.0, 3.0, 3.0]

    def test_orphans_take_nearest_situation(self):
        lib = new_library(2, 5.0, 2)
        lib, far = lib.add(GaussianParams(np.full(2, 10.0), np.eye(2)), 2)
        lib, near = lib.add(GaussianParams(np.zeros(2), np.eye(2)), 2)
        lab = RunLabeler()
        lab.add(sa_step(0, False, None, np.zeros(2)))
        lab.add(sa_step(1, False, None, np.ones(2) * 0.1))
        lab.end_episode(None)
        assert lab.finish(lib) == [near.symbol, near.symbol]


class TestSituationAwareness:
    def test_prior_gathering_and_replay(self):
        cfg = SAConfig(min_support=10, noise_floor=0.0)
        sa = SituationAwareness.fresh(3, cfg, seed=0)
        rng = np.random.default_rng(0)
        resolved = [len(sa.observe_vector(rng.normal(size=3))) for _ in range(12)]
        assert resolved == [0] * 9 + [10, 1, 1]
        assert sa.library.detector_prior is not None and len(sa.library) == 1

    def test_flush_short_stream(self):
        sa = SituationAwareness.fresh(2, SAConfig(min_support=10), seed=0)
        for x in np.random.default_rng(1).normal(size=(4, 2)):
            sa.observe_vector(x)
        steps = sa.flush()
        assert [s.step for s in steps] == [0, 1, 2, 3]

    def test_noise_floor_is_seeded(self):
        def run():
            sa = SituationAwareness.fresh(2, SAConfig(min_support=5), seed=4)
            return [s.x for x in np.ones((8, 2)) for s in sa.observe_vector(x)]

        np.testing.assert_array_equal(run(), run())


def point_mass_dataset(seed, regimes, n, every=100):
    """Exploration transitions of the point mass with the regime switching every ``every`` steps."""
    rng = np.random.default_rng(seed)
    preset = environment("wind-desk")
    policy = exploration_policy(preset, seed)
    s, out, labels = preset.start_state(), [], []
    for t in range(n):
        r = (t // every) % len(regimes)
        a, _ = policy(s, None, t, None)
        s2 = pointmass_wind_step(s, a, wind(regimes[r]), rng)
        out.append(Transition(s, None, a, s2, 0, t))
        labels.append(r)
        s = s2
    return ReplayBuffer(out), np.array(labels)


PASSIVE = default_config("aerial-desk")


class TestPassive:
    @pytest.mark.parametrize("seed", range(3))
    def test_two_regime_oracle(self, seed):
        data, regimes = point_mass_dataset(seed, ("nominal", "gust-east"), 1000)
        annotated, lib = annotate(data, PASSIVE)
        assert len(lib) == 2
        symbols = np.array([t.symbol for t in annotated])
        majority = {r: sps.mode(symbols[regimes == r]).mode for r in (0, 1)}
        assert majority[0] != majority[1]
        consistent = np.mean(symbols == np.vectorize(majority.get)(regimes))
        assert consistent >= 0.9

    def test_single_regime_library(self):
        data, _ = point_mass_dataset(5, ("gust-north",), 600)
        _, lib = annotate(data, PASSIVE)
        assert len(lib) == 1

    def test_order_preserved(self):
        data, _ = point_mass_dataset(1, ("nominal", "gust-east"), 300)
        annotated, _ = annotate(data, PASSIVE)
        for a, b in zip(data, annotated):
            np.testing.assert_array_equal(a.state, b.state)
            assert a.step == b.step and b.symbol is not None

    def test_empty_dataset_writes_nothing(self, tmp_path):
        with pytest.raises(InputError):
            annotate(ReplayBuffer(), PASSIVE, tmp_path / "out")
        assert not (tmp_path / "out").exists()

    def test_annotation_consistency(self):
        data, _ = point_mass_dataset(2, ("nominal", "gust-east"), 600)
        first, _ = annotate(data, PASSIVE)
        stripped = ReplayBuffer([t.with_symbol(None) for t in first])
        second, _ = annotate(stripped, PASSIVE)
        assert [t.symbol for t in first] == [t.symbol for t in second]


TINY = ExperimentConfig(
    env="wind-env1", seed=3, sa=SAConfig(tau=15.0, min_support=40, prior_inflation=1.0),
    model=EnsembleConfig(members=2, hidden=(16,), batch_size=64, max_epochs=3, patience=2),
    mppi=MPPIConfig(iterations=1, population=16, horizon=3),
).replace(budget=dataclasses.replace(ExperimentConfig().budget, episodes=1, eval_episodes=1))


def file_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.suffix in (".csv", ".jsonl", ".json")}


@pytest.fixture(scope="module")
def active_runs(tmp_path_factory):
    a = tmp_path_factory.mktemp("active_a")
    b = tmp_path_factory.mktemp("active_b")
    return (run_active(TINY, a), a), (run_active(TINY, b), b)


class TestActive:
    def test_zero_episodes_is_warmup_only(self, tmp_path):
        cfg = TINY.replace(budget=dataclasses.replace(TINY.budget, episodes=0))
        report = run_active(cfg, tmp_path)
        buf = ReplayBuffer.read_jsonl(tmp_path / "buffer.jsonl")
        assert len(buf) == cfg.warmup_steps == 80
        assert len(report.episode_rewards) == 1
        assert not (tmp_path / "model.npz").exists()

    def test_determinism(self, active_runs):
        (ra, a), (rb, b) = active_runs
        assert ra.to_dict() == rb.to_dict()
        assert file_bytes(a) == file_bytes(b)

    def test_artifacts(self, active_runs):
        (_, a), _ = active_runs
        for name in ("buffer.jsonl", "library.json", "model.npz", "detector.csv", "steps.csv",
                     "ground_truth.csv", "rewards.csv", "report.json", "config.yaml", "situation_means.csv"):
            assert (a / name).is_file(), name
        buf = ReplayBuffer.read_jsonl(a / "buffer.jsonl")
        assert all(t.symbol is not None for t in buf)

    def test_report_recomputed_from_traces(self, active_runs):
        (report, a), _ = active_runs
        assert report_from_traces(a).to_dict() == report.to_dict()

    def test_wrong_mode(self):
        with pytest.raises(ConfigError):
            run_active(TINY.replace(mode="passive"))


class TestEvaluate:
    def test_missing_artifacts(self, tmp_path):
        with pytest.raises(NotFoundError):
            evaluate_paths(tmp_path / "model.npz", tmp_path / "library.json", TINY)

    def test_library_unchanged_and_traces_consistent(self, active_runs, tmp_path):
        (_, a), _ = active_runs
        digest = hashlib.sha256((a / "library.json").read_bytes()).hexdigest()
        cfg = TINY.replace(mode="evaluate")
        reports = evaluate_paths(a / "model.npz", a / "library.json", cfg, tmp_path)
        assert hashlib.sha256((a / "library.json").read_bytes()).hexdigest() == digest
        again = report_from_traces(tmp_path, heldout_prefix="heldout_")
        assert again.to_dict() == reports["model"].to_dict()

    def test_detection_matches_ground_truth_log(self, active_runs, tmp_path):
        (_, a), _ = active_runs
        evaluate_paths(a / "model.npz", a / "library.json", TINY.replace(mode="evaluate"), tmp_path)
        det, gt = read_csv(tmp_path / "detector.csv"), read_csv(tmp_path / "ground_truth.csv")
        rew = read_csv(tmp_path / "rewards.csv")
        cps = det["step"][det["changepoint"] == 1]
        offline = detection_metrics(cps, gt["step"], int(rew["steps"][0]))
        assert offline.switches > 0
        np.testing.assert_equal(report_from_traces(tmp_path).detection, offline.to_dict())

    def test_empty_library(self, active_runs):
        (_, a), _ = active_runs
        with pytest.raises(InputError):
            evaluate(EnsembleModel.load(a / "model.npz"), new_library(27, 5.0, 10), TINY)


class TestTrainPassive:
    def test_models_and_baseline(self, tmp_path):
        data, _ = point_mass_dataset(0, ("nominal", "gust-east"), 400)
        cfg = PASSIVE.replace(model=EnsembleConfig(members=2, hidden=(16,), max_epochs=2, patience=1))
        model, baseline, buf, lib = train_passive(data, cfg, tmp_path)
        assert model.config.use_symbol and not baseline.config.use_symbol
        assert (tmp_path / "model.npz").is_file() and (tmp_path / "baseline.npz").is_file()
        assert load_library(tmp_path / "library.json") == lib
        assert len(ReplayBuffer.read_jsonl(tmp_path / "buffer.jsonl")) == len(buf) == 400
