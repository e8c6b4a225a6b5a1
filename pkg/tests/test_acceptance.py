"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed as they are decided and again in the terminal summary.
Set ``SITAWARE_ACCEPTANCE_OUT`` to keep the persisted artifacts (detection
delays, desk-scale comparison table) in a fixed directory.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats as sps

from sitaware.bocd import ChangepointDetector, bocd_init, bocd_predictive, bocd_step, nw_update
from sitaware.cli import main
from sitaware.dynamics.features import situation_vector
from sitaware.dynamics.nn import GaussianMLP, weighted_nll
from sitaware.envs.pointmass import pointmass_wind_step
from sitaware.envs.presets import wind
from sitaware.harness.config import default_config
from sitaware.harness.io import CsvTrace
from sitaware.harness.metrics import detection_metrics, merge_detection
from sitaware.harness.pipelines import collect, evaluate, train_passive
from sitaware.mppi import KnownDynamics, MPPIConfig, mppi_plan, random_shooting
from sitaware.situations import mgf_symbol
from sitaware.stats import GaussianParams, NormalWishartParams
from streams import batch_posterior, single_regime_stream, two_regime_stream

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    env = os.environ.get("SITAWARE_ACCEPTANCE_OUT")
    if env:
        p = Path(env)
        p.mkdir(parents=True, exist_ok=True)
        return p
    return tmp_path_factory.mktemp("acceptance")


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def test_c01_conjugacy_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for case in range(200):
        rng = np.random.default_rng([1, case])
        d, n = int(rng.integers(1, 7)), int(rng.integers(1, 51))
        a = rng.normal(size=(d, d))
        prior = NormalWishartParams(rng.normal(size=d), rng.uniform(0.1, 5.0), a @ a.T + np.eye(d),
                                    d + rng.uniform(0.0, 5.0))
        xs = rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0) + rng.normal(size=d)
        b = prior
        for x in xs:
            b = nw_update(b, x)
        mu, kappa, T, nu = batch_posterior(prior, xs)
        worst = max(worst, rel_err(b.mu0, mu), rel_err(b.kappa, kappa), rel_err(b.T, T), rel_err(b.nu, nu))
    secs = time.perf_counter() - t0
    record(1, worst <= 1e-8 and secs < 10.0, f"max rel err {worst:.2e} over 200 cases, {secs:.1f} s")


def test_c02_posterior_normalization():
    worst = 0.0
    streams = [two_regime_stream(0, n=10_000)[0], single_regime_stream(1, n=10_000)]
    for x in streams:
        state = bocd_init(NormalWishartParams.empirical(x[:50], inflation=2.0), 60.0)
        for xi in x:
            state, _ = bocd_step(state, xi)
            worst = max(worst, abs(1.0 - float(state.posterior().sum())))
    record(2, worst <= 1e-9, f"max |1 - sum| {worst:.2e} over 2 x 10000 steps")


def mc_predictive(state, grid, n, rng):
    """Monte-Carlo marginalization of the Normal-Wishart mixture over (mu, Lambda)."""
    w = state.posterior() / state.posterior().sum()
    counts = rng.multinomial(n, w)
    dens = np.zeros(len(grid))
    for i, c in enumerate(counts):
        if c == 0:
            continue
        b = state.belief(i)
        lam = sps.wishart.rvs(df=b.nu, scale=np.linalg.inv(b.T), size=c, random_state=rng).reshape(c, 2, 2)
        cov = np.linalg.inv(lam)
        mu = b.mu0 + np.einsum("nij,nj->ni", np.linalg.cholesky(cov / b.kappa), rng.standard_normal((c, 2)))
        diff = grid[None, :, :] - mu[:, None, :]
        q = np.einsum("ngi,nij,ngj->ng", diff, lam, diff)
        logdet = np.linalg.slogdet(lam)[1]
        dens += np.exp(-0.5 * q + 0.5 * logdet[:, None] - math.log(2 * math.pi)).sum(axis=0)
    return dens / n


def test_c03_predictive_oracle():
    rng = np.random.default_rng(3)
    x, _ = two_regime_stream(5, d=2, n=140, segment=(100, 100))
    state = bocd_init(NormalWishartParams.empirical(x[:20], inflation=2.0), 20.0, truncation_log_threshold=-12.0)
    for xi in x[:110]:
        state, _ = bocd_step(state, xi)
    centre, sd = x[:110].mean(axis=0), x[:110].std(axis=0)
    g = np.linspace(-2.0, 2.0, 7)
    grid = np.array([centre + sd * [u, v] for u in g for v in g])
    mix = bocd_predictive(state)
    exact = np.array([mix.pdf(p) for p in grid])
    mc = mc_predictive(state, grid, 100_000, rng)
    worst = float(np.max(np.abs(exact - mc)))
    record(3, worst <= 1e-2, f"max abs diff {worst:.2e} on a 7x7 grid, {state.size} hypotheses")


def test_c04_detection(artifacts):
    t0 = time.perf_counter()
    parts = []
    for seed in range(10):
        x, switches = two_regime_stream(seed)
        det = ChangepointDetector(NormalWishartParams.empirical(x[:50], inflation=2.0), 60.0)
        cps = [t for t, d in enumerate(det.run(x)) if d.changepoint]
        parts.append(detection_metrics(cps, switches, len(x)))
    secs = time.perf_counter() - t0
    m = merge_detection(parts)
    trace = CsvTrace(artifacts / "c04_delays.csv", ["delay"])
    for d in m.delays:
        trace.add(d)
    trace.flush()
    ok = m.detection_rate >= 0.9 and m.false_alarms_per_500 <= 1.0 and secs < 60.0
    record(4, ok, f"detected {m.detected}/{m.switches}, {m.false_alarms_per_500:.2f} false alarms per 500, "
                  f"median delay {np.median(m.delays):.0f}, {secs:.1f} s")


def finite_difference_error(rng) -> float:
    m, d_in, d_out = int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, 4))
    hidden = tuple(int(h) for h in rng.integers(2, 7, size=int(rng.integers(1, 3))))
    net = GaussianMLP(m, d_in, hidden, d_out, rng, slope=0.1)
    b = int(rng.integers(1, 9))
    x, y = rng.normal(size=(m, b, d_in)), rng.normal(size=(m, b, d_out))
    w = rng.uniform(0.2, 3.0, size=(m, b))

    def total():
        mu, lv = net.forward(x)
        return weighted_nll(mu, lv, y, w)[0].sum()

    mu, lv = net.forward(x)
    _, dmu, dlv = weighted_nll(mu, lv, y, w)
    net.backward(dmu, dlv)
    pairs = [(p, g.copy()) for p, g in zip(net.params, net.grads)]
    # loss gradients with respect to the outputs
    mu, lv = mu.copy(), lv.copy()
    pairs += [(mu, dmu), (lv, dlv)]
    worst, h = 0.0, 1e-5
    for arr, grad in pairs:
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            vals = []
            for step in (h, -h):
                arr[idx] = old + step
                vals.append(weighted_nll(mu, lv, y, w)[0].sum() if arr is mu or arr is lv else total())
            arr[idx] = old
            num = (vals[0] - vals[1]) / (2 * h)
            worst = max(worst, abs(num - grad[idx]) / max(abs(num), 1e-6))
    return worst


def test_c05_gradient_checks():
    worst = max(finite_difference_error(np.random.default_rng([5, i])) for i in range(50))
    record(5, worst <= 1e-4, f"max rel err {worst:.2e} over 50 batches")


def test_c06_hyperparameter_fidelity():
    g, a = default_config("ground"), default_config("aerial")
    got = {
        "ground": (g.sa.hazard_lambda, g.sa.tau, g.sa.min_support,
                   (g.mppi.iterations, g.mppi.population, g.mppi.gamma, g.mppi.sigma, g.mppi.beta)),
        "aerial": (a.sa.hazard_lambda, a.sa.tau, a.sa.min_support, a.mppi.population),
    }
    want = {"ground": (60.0, 80.0, 60, (2, 1500, 0.9, 0.4, 0.4)), "aerial": (60.0, 200.0, 40, 1024)}
    record(6, got == want, f"{got}")


def test_c07_symbol_and_dimension():
    theta = mgf_symbol(GaussianParams(np.zeros(26), np.eye(26)), np.full(26, 0.1))
    rng = np.random.default_rng(7)
    dim = situation_vector(rng.normal(size=12), rng.normal(size=2), rng.normal(size=12)).size
    record(7, abs(theta - 0.13) <= 1e-12 and dim == 26, f"theta {theta!r}, situation vector dim {dim}")


DESK = ("ground-desk", "aerial-desk")
SEEDS = range(5)


@pytest.fixture(scope="module")
def desk_results(artifacts):
    """Collect, annotate, train both models and evaluate them on the same episodes."""
    t0 = time.perf_counter()
    rows = []
    for name in DESK:
        for seed in SEEDS:
            cfg = default_config(name).replace(seed=seed)
            out = artifacts / f"{name}_{seed}"
            data = collect(cfg, out)
            model, twin, _, library = train_passive(data, cfg, out)
            r_theta = evaluate(model, library, cfg, out, prefix="theta_")
            r_twin = evaluate(twin, library, cfg, out, prefix="twin_")
            rows.append({"env": name, "seed": seed, "situations": len(library),
                         "mse": [r_theta.one_step_mse, r_twin.one_step_mse],
                         "reward": [r_theta.episode_rewards, r_twin.episode_rewards],
                         "inconsistency": [r_theta.control_inconsistency, r_twin.control_inconsistency]})
            print(json.dumps(rows[-1]))
    secs = time.perf_counter() - t0
    (artifacts / "desk_results.json").write_text(json.dumps({"seconds": secs, "rows": rows}, indent=2))
    return rows, secs


def test_c08_desk_sa_benefit(desk_results):
    rows, secs = desk_results
    ok, parts = secs < 1800.0, []
    for name in DESK:
        env = [r for r in rows if r["env"] == name]
        theta = np.array([r["mse"][0] for r in env])
        twin = np.array([r["mse"][1] for r in env])
        p = sps.wilcoxon(theta - 0.85 * twin, alternative="less").pvalue
        rew_theta = np.mean([v for r in env for v in r["reward"][0]])
        rew_twin = np.mean([v for r in env for v in r["reward"][1]])
        ok &= p < 0.05 and rew_theta > rew_twin
        parts.append(f"{name}: mse ratio {np.mean(theta / twin):.2f} (p={p:.3f}), "
                     f"reward {rew_theta:.2f} vs {rew_twin:.2f}")
    record(8, ok, "; ".join(parts) + f"; {secs / 60:.1f} min")


def test_c09_control_inconsistency(desk_results):
    rows, _ = desk_results
    ok, parts = True, []
    for name in DESK:
        env = [r for r in rows if r["env"] == name]
        theta = np.mean([r["inconsistency"][0] for r in env])
        twin = np.mean([r["inconsistency"][1] for r in env])
        ok &= theta < twin
        parts.append(f"{name}: {theta:.2e} vs {twin:.2e}")
    record(9, ok, "; ".join(parts))


def test_c10_mppi_vs_random_shooting():
    nominal = wind("nominal")
    model = KnownDynamics(lambda s, a: pointmass_wind_step(s, a, nominal))
    cfg = MPPIConfig(population=512, horizon=10, action_low=(-3.0,) * 3, action_high=(3.0,) * 3)
    wins = 0
    for trial in range(20):
        rng = np.random.default_rng([10, trial])
        start = np.zeros(12)
        start[:3] = rng.uniform(-2, 2, 3)
        goal = rng.uniform(-2, 2, 3)
        res = mppi_plan(model, start, 0.0, goal, (), cfg, seed=trial)
        _, best_random = random_shooting(model, start, 0.0, goal, (), cfg, cfg.population, seed=trial)
        wins += res.expected_cost <= best_random
    record(10, wins >= 18, f"{wins}/20 trials")


TINY = """\
name: tiny
env: wind-env1
seed: 4
sa: {tau: 15.0, min_support: 40, prior_inflation: 1.0}
model: {members: 2, hidden: [16], batch_size: 64, max_epochs: 3, patience: 2}
mppi: {iterations: 1, population: 16, horizon: 3}
budget: {episodes: 1, collect_episodes: 1, eval_episodes: 1}
"""


def run_all_subcommands(root: Path, config: str, stream: str) -> None:
    data = root / "collect" / "dataset.jsonl"
    commands = [
        ["collect", "--out", str(root / "collect")],
        ["annotate", "--dataset", str(data), "--out", str(root / "annotate")],
        ["train-passive", "--dataset", str(data), "--out", str(root / "passive")],
        ["train-active", "--out", str(root / "active")],
        ["evaluate", "--run", str(root / "passive"), "--out", str(root / "evaluate")],
        ["detect", "--stream", stream, "--out", str(root / "detect")],
        ["plot-data", "--run", str(root / "active"), "--out", str(root / "plots")],
    ]
    for argv in commands:
        assert main([argv[0], "--config", config, *argv[1:]]) == 0, argv[0]


def test_c11_end_to_end_determinism(tmp_path, capsys):
    (tmp_path / "tiny.yaml").write_text(TINY)
    np.savetxt(tmp_path / "stream.csv", two_regime_stream(11, n=400)[0], delimiter=",")
    for run in ("a", "b"):
        run_all_subcommands(tmp_path / run, str(tmp_path / "tiny.yaml"), str(tmp_path / "stream.csv"))
    capsys.readouterr()
    files = {run: {p.relative_to(tmp_path / run): p.read_bytes() for p in sorted((tmp_path / run).rglob("*.csv"))}
             for run in ("a", "b")}
    differing = sorted(str(k) for k in files["a"] if files["a"][k] != files["b"].get(k))
    subdirs = {k.parts[0] for k in files["a"]}
    ok = files["a"].keys() == files["b"].keys() and not differing and len(subdirs) == 7
    record(11, ok, f"{len(files['a'])} CSV files from {len(subdirs)} subcommands, {len(differing)} differ")
