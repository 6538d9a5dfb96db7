import csv

import numpy as np
import pytest

from gaitforge.env import BipedEnv, Command
from gaitforge.eval import (CommandGrid, KinematicOracle, MissingCheckpoint, PerturbationConfig,
                            Perturber, Trajectory, WindowTooLong, achieved_params, compare_models,
                            eval_env, perturbation_eval, perturbation_sweep, rollout, sweep_sets,
                            write_perturb_csv, write_sets_csv)
from gaitforge.gaitlib import build_library, default_axes
from gaitforge.learner import PpoConfig, make_policy, save_checkpoint
from gaitforge.model import default_model

DT = 66 * 5e-4


@pytest.fixture(scope="module")
def lib():
    return build_library(default_model(), *default_axes())


@pytest.fixture(scope="module")
def untrained():
    return make_policy(PpoConfig(), np.random.default_rng(0))


def synthetic(vx, z):
    t = Trajectory(DT)
    t.vx, t.z = list(vx), list(z)
    t.reward = [1.0] * len(t.vx)
    return t


def test_achieved_params_examples():
    n = int(round(5.0 / DT))
    assert achieved_params(synthetic(np.zeros(n + 50), np.full(n + 50, 0.9))) == (0.0, 0.9)
    vx, _ = achieved_params(synthetic(np.full(n, 0.5), np.full(n, 0.9)))
    assert vx == 0.5
    ramp = np.linspace(0.0, 1.0, n)
    assert achieved_params(synthetic(ramp, np.full(n, 0.9)))[0] == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(WindowTooLong):
        achieved_params(synthetic(np.zeros(n - 1), np.zeros(n - 1)))


def test_command_grid():
    g = CommandGrid.regular()
    assert len(g.vx) == 41 and len(g.hz) == 6
    assert g.vx[0] == -2.0 and g.vx[-1] == 2.0 and g.hz[-1] == pytest.approx(0.95)
    with pytest.raises(ValueError):
        CommandGrid((0.1, 0.0), (0.8,))


def test_rollout_contracts(lib, untrained):
    env = eval_env(BipedEnv(lib, n=1), 100)
    traj, ret, ok = rollout(untrained, env, Command(0.3, 0.9), 0)
    assert len(traj) == 0 and ret == 0.0 and ok
    a = rollout(untrained, env, Command(0.3, 0.9), 100, seed=5)
    b = rollout(untrained, env, Command(0.3, 0.9), 100, seed=5)
    assert a[0].x == b[0].x and a[1] == b[1]
    traj, _, ok = a
    assert len(traj) <= 100 and ok == (len(traj) == 100)


def test_oracle_survives_and_tracks(lib):
    env = eval_env(BipedEnv(lib, n=1), 450)
    traj, ret, ok = rollout(KinematicOracle(), env, Command(0.7, 0.8), 450)
    assert ok and len(traj) == 450
    vx, hz = achieved_params(traj)
    assert abs(vx - 0.7) < 0.01 and abs(hz - 0.8) < 0.01


GRID = CommandGrid((-1.0, -0.5, 0.0, 0.5, 1.0), (0.70, 0.75, 0.80, 0.85, 0.95))


def test_oracle_sweep_is_full_grid(lib):
    res = sweep_sets(KinematicOracle(), GRID, BipedEnv(lib, n=1))
    assert res.feasible == {(vx, hz) for _, _, vx, hz in GRID.points()}
    assert len(res.safe) == len(res.feasible)
    for o in res.outcomes:
        assert abs(o.achieved_vx - o.vx) < 0.01 and abs(o.achieved_hz - o.hz) < 0.01


def test_untrained_policy_is_rarely_feasible(lib, untrained):
    res = sweep_sets(untrained, GRID, BipedEnv(lib, n=1))
    assert len(res.feasible) < 0.05 * len(GRID)
    assert all(o.failure_tick is not None for o in res.outcomes if not o.survived)


def test_sweep_deterministic_and_order_invariant(lib, untrained):
    grid = CommandGrid((-0.5, 0.5), (0.75, 0.9))
    env = BipedEnv(lib, n=1)
    a = sweep_sets(untrained, grid, env, seed=3)
    b = sweep_sets(untrained, grid, env, seed=3)
    c = sweep_sets(untrained, grid, env, seed=3, order=[3, 1, 0, 2], batch=1)
    assert a.outcomes == b.outcomes == c.outcomes


def test_sets_csv(lib, tmp_path):
    res = sweep_sets(KinematicOracle(), CommandGrid((0.0, 0.5), (0.8,)), BipedEnv(lib, n=1))
    write_sets_csv(res, tmp_path / "sets.csv", 11)
    lines = (tmp_path / "sets.csv").read_text().splitlines()
    assert lines[0] == "# master_seed=11"
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 2 and rows[0]["survived"] in ("1", "True")


class CountingEnv:
    def __init__(self, n):
        self.done = np.zeros(n, dtype=bool)
        self.durations = []

    def set_wrench(self, i, wrench, seconds):
        self.durations.append(seconds)


def test_trigger_statistics():
    cfg = PerturbationConfig(beta=1.0)
    n = 400
    p = Perturber(cfg, [np.random.SeedSequence([0, k]) for k in range(n)])
    env = CountingEnv(n)
    for tick in range(2500):
        p(env, tick)
    mean = p.triggers.mean()
    # binomial mean 3.75, sd of the mean about 0.1
    assert abs(mean - 2500 * 0.0015) < 0.4
    assert max(env.durations) <= 0.8 and min(env.durations) >= 0.0


def test_trigger_coupling_across_beta():
    seeds = [np.random.SeedSequence([1, k]) for k in range(50)]
    low = Perturber(PerturbationConfig(beta=0.2), seeds)
    high = Perturber(PerturbationConfig(beta=1.0), seeds)
    env = CountingEnv(50)
    for tick in range(2500):
        low(env, tick)
        high(env, tick)
    assert np.all(low.triggers <= high.triggers)


def test_beta_zero_normalizes_to_one(lib, untrained):
    cfg = PerturbationConfig(beta=0.0, rollouts=4, ticks=60)
    res = perturbation_eval(untrained, cfg, BipedEnv(lib, n=1), seed=2)
    assert res.normalized == 1.0


def test_perturbation_config_bounds():
    with pytest.raises(ValueError):
        PerturbationConfig(beta=1.5)
    assert PerturbationConfig(beta=0.5).probability == pytest.approx(0.00075)


def test_compare_models(lib, untrained, tmp_path):
    save_checkpoint(tmp_path / "a.json", untrained, cfg=PpoConfig())
    cfg = PerturbationConfig(rollouts=2, ticks=40)
    betas = [0, 0.2, 0.4, 0.6, 0.8, 1.0]
    table = compare_models({m: tmp_path / "a.json" for m in ("NRC+GL", "NRC+SG", "RC+SG")}, betas,
                           lambda meta: BipedEnv(lib, n=1), cfg)
    assert len(table) == 3 and all(len(rows) == 6 for rows in table.values())
    first = [r.normalized for r in table["NRC+GL"]]
    for rows in table.values():
        assert [r.normalized for r in rows] == first
    write_perturb_csv(table, tmp_path / "p.csv", 0)
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 2 + 18
    with pytest.raises(MissingCheckpoint):
        compare_models({"NRC+GL": tmp_path / "missing.json"}, betas, lambda meta: None, cfg)


def test_sweep_matches_single_perturbation_eval(lib, untrained):
    cfg = PerturbationConfig(rollouts=3, ticks=50)
    env = BipedEnv(lib, n=1)
    rows = perturbation_sweep(untrained, env, [0.0, 0.6], cfg, seed=4)
    single = perturbation_eval(untrained, PerturbationConfig(beta=0.6, rollouts=3, ticks=50), env, 4)
    assert rows[0].normalized == 1.0
    assert rows[1].normalized == single.normalized
