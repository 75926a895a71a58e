"""Acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible under ``pytest -v``)
and then asserts. The slow end-to-end criteria (6, 7, 8) take 10 to 13
minutes together on one core.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from shaped_es.config import load_config
from shaped_es.envs import ArmEnv, PointMassEnv, run_episode
from shaped_es.es import (CmaState, SearchDistribution, cma_update, orthogonalize, sample_perturbations,
                          sample_population, vanilla_es_update)
from shaped_es.experiments import bench_es, run_experiment
from shaped_es.idm import IdmDataset, filter_trajectories, idm_action_error, idm_train, new_idm
from shaped_es.params import NetShape, backward, flatten, forward, init_net, unflatten

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = range(5)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail

    return emit


def desk_config(name, tmp_path, **overrides):
    pairs = [f"{k}={v}" for k, v in overrides.items()] + [f"output={tmp_path}"]
    return load_config(CONFIGS / name, pairs, environ={})


# -- 1 -----------------------------------------------------------------------------

def test_c1_backprop_matches_finite_differences(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(100):
        hidden = (20, 20) if trial % 2 == 0 else (20, 20, 20)
        n_in, n_out = int(rng.integers(2, 10)), int(rng.integers(1, 4))
        shape = NetShape.mlp(n_in, hidden, n_out)
        net = init_net(shape, rng)
        theta = flatten(net)
        x = rng.standard_normal((3, n_in))
        g_out = rng.standard_normal((3, n_out))
        analytic = backward(net, x, g_out)
        numeric = np.empty_like(theta)
        h = 1e-6
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            up = np.sum(forward(unflatten(shape, theta + e), x) * g_out)
            down = np.sum(forward(unflatten(shape, theta - e), x) * g_out)
            numeric[i] = (up - down) / (2 * h)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, rel)
    secs = time.perf_counter() - start
    report(1, worst < 1e-4 and secs < 10, f"max relative error {worst:.2e} over 100 nets in {secs:.1f}s")


# -- 2 -----------------------------------------------------------------------------

def test_c2_guided_covariance(report):
    start = time.perf_counter()
    n, k, count = 10, 2, 10**6
    rng = np.random.default_rng(7)
    basis = np.linalg.qr(rng.standard_normal((n, k)))[0]
    worst_entry, worst_trace = 0.0, 0.0
    for alpha in (0.0, 0.5, 1.0):
        dist = SearchDistribution(np.zeros(n), 1.0, alpha=alpha, basis=basis)
        eps = sample_perturbations(dist, count, rng)
        emp = eps.T @ eps / count
        target = alpha / n * np.eye(n) + (1 - alpha) / k * basis @ basis.T
        worst_entry = max(worst_entry, np.max(np.abs(emp - target)))
        worst_trace = max(worst_trace, abs(np.trace(emp) - 1.0))
    secs = time.perf_counter() - start
    ok = worst_entry < 1e-2 and worst_trace < 1e-2 and secs < 30
    report(2, ok, f"max entry error {worst_entry:.1e}, trace error {worst_trace:.1e} in {secs:.1f}s")


# -- 3 -----------------------------------------------------------------------------

def test_c3_antithetic_estimator_on_sphere(report):
    start = time.perf_counter()
    dim, sigma, pairs = 20, 0.1, 32
    rng = np.random.default_rng(3)
    cosines = []
    for _ in range(100):
        d = rng.standard_normal(dim)
        mu = 5.0 * d / np.linalg.norm(d)
        pop = sample_population(SearchDistribution(mu, sigma), pairs, rng)
        f = -np.sum(pop.members**2, axis=1)
        step = vanilla_es_update(mu, pop.eps, f[:pairs], f[pairs:], 1.0, 1.0, sigma) - mu
        grad = -2.0 * mu
        cosines.append(step @ grad / (np.linalg.norm(step) * np.linalg.norm(grad)))
    run = bench_es("sphere", dim=dim, sigma=sigma, pairs=pairs, iterations=500, start_norm=5.0, tol=0.1)
    secs = time.perf_counter() - start
    ok = np.mean(cosines) > 0.5 and run["converged"] and run["iterations"] <= 500 and secs < 60
    report(3, ok, f"mean cosine {np.mean(cosines):.3f}; |mu| {run['distance']:.3f} after {run['iterations']} "
                  f"iterations ({secs:.1f}s)")


# -- 4 -----------------------------------------------------------------------------

def brute_force_cma(members, rewards, num_elite, weight_decay):
    scored = sorted(range(len(members)), key=lambda i: -(rewards[i] - weight_decay * sum(v * v for v in members[i])))
    elites = [members[i] for i in scored[:num_elite]]
    n = len(members[0])
    mu = [sum(e[j] for e in elites) / num_elite for j in range(n)]
    cov = [[sum((e[i] - mu[i]) * (e[j] - mu[j]) for e in elites) / num_elite for j in range(n)] for i in range(n)]
    return np.array(mu), np.array(cov)


def test_c4_cma_update_and_sphere(report):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(500):
        num_elite = int(rng.integers(1, 6))
        pop = num_elite * 4
        members = rng.standard_normal((pop, int(rng.integers(1, 6))))
        rewards = rng.standard_normal(pop)
        mu, cov = cma_update(members, rewards, 0.25, 0.05)
        bm, bc = brute_force_cma(members.tolist(), rewards.tolist(), num_elite, 0.05)
        worst = max(worst, np.max(np.abs(mu - bm)), np.max(np.abs(cov - bc)))
    gens = []
    for seed in range(20):
        srng = np.random.default_rng(seed)
        d = srng.standard_normal(2)
        state = CmaState(d / np.linalg.norm(d), np.eye(2))
        for g in range(1, 101):
            x = state.sample(64, srng)
            state.update(x, -np.sum(x * x, axis=1), 0.25, 0.05)
            if np.linalg.norm(state.mu) < 0.05:
                break
        gens.append(g if np.linalg.norm(state.mu) < 0.05 else None)
    secs = time.perf_counter() - start
    solved = [g for g in gens if g is not None]
    ok = worst < 1e-12 and len(solved) == len(gens) and secs < 60
    report(4, ok, f"max deviation from brute force {worst:.1e}; sphere solved in {len(solved)}/20 starts "
                  f"(worst {max(solved) if solved else '-'} generations, {secs:.1f}s)")


# -- 5 -----------------------------------------------------------------------------

def test_c5_orthogonalization(report):
    rng = np.random.default_rng(5)
    worst_ortho, worst_resid, rank_ok = 0.0, 0.0, True
    for trial in range(1000):
        n, k = int(rng.integers(3, 60)), int(rng.integers(1, 8))
        k = min(k, n)
        d = rng.standard_normal((n, k)) * 10.0 ** rng.uniform(-3, 3)
        if trial % 3 == 1 and k > 1:
            d[:, rng.integers(k)] = 0.0  # zero column
        if trial % 3 == 2 and k > 2:
            d[:, -1] = d[:, 0] * 2.0 - d[:, 1]  # dependent column
        u = orthogonalize(d)
        worst_ortho = max(worst_ortho, np.max(np.abs(u.T @ u - np.eye(u.shape[1]))) if u.shape[1] else 0.0)
        resid = np.max(np.abs(d - u @ (u.T @ d))) / max(np.max(np.abs(d)), 1e-300)
        worst_resid = max(worst_resid, resid)
        rank_ok &= u.shape[1] == np.linalg.matrix_rank(d)
    ok = worst_ortho < 1e-10 and worst_resid < 1e-10 and rank_ok
    report(5, ok, f"max |U^T U - I| {worst_ortho:.1e}, relative projection residual {worst_resid:.1e}, "
                  f"ranks {'match' if rank_ok else 'differ'}")


# -- 6 -----------------------------------------------------------------------------

def test_c6_idm_learnability(report, tmp_path):
    start = time.perf_counter()
    env = PointMassEnv()
    rng = np.random.default_rng(6)
    s, d, a = env.sample_oracle_transitions(rng, 6000)
    ds = IdmDataset.for_env(env)
    ds.add(s[:5000], d[:5000], a[:5000], 0)
    model, _ = idm_train(new_idm(env, rng), env, ds, rng, epochs=60)
    oracle_err = idm_action_error(model, env, s[5000:], d[5000:], a[5000:])
    improved = []
    for seed in SEEDS:
        res = run_experiment(desk_config("pointmass.cfg", tmp_path / f"s{seed}", seed=seed, generations=31))
        improved.append(res.idm_test_loss[30] < res.idm_test_loss[3])
    secs = time.perf_counter() - start
    ok = oracle_err < 0.05 and sum(improved) >= 4 and secs < 300
    report(6, ok, f"oracle held-out action error {oracle_err:.4f}; test loss fell by generation 30 in "
                  f"{sum(improved)}/5 seeds ({secs:.0f}s)")


# -- 7 -----------------------------------------------------------------------------

def test_c7_shaping_beats_vanilla(report, tmp_path):
    start = time.perf_counter()
    faster, safe, lines = 0, 0, []
    for seed in SEEDS:
        shaped = run_experiment(desk_config("pointmass.cfg", tmp_path / f"shaped{seed}", seed=seed))
        vanilla = run_experiment(desk_config("pointmass.cfg", tmp_path / f"vanilla{seed}", seed=seed,
                                             method="vanilla"))
        target = 0.8 * shaped.reference_reward
        gs, gv = shaped.generations_to(target), vanilla.generations_to(target)
        faster += gs is not None and (gv is None or gs < gv)
        fs, fv = shaped.eval_curve[-1], vanilla.eval_curve[-1]
        safe += fs >= fv - 0.1 * abs(fv)
        lines.append(f"seed {seed}: {gs} vs {gv} gens, final {fs:.2f} vs {fv:.2f}")
    secs = time.perf_counter() - start
    ok = faster >= 4 and safe == 5 and secs < 900
    report(7, ok, f"shaped faster in {faster}/5 pairs, no regression in {safe}/5 ({secs:.0f}s); " + "; ".join(lines))


# -- 8 -----------------------------------------------------------------------------

def test_c8_arm_tracks_the_curve(report, tmp_path):
    start = time.perf_counter()
    finals = []
    for seed in SEEDS:
        res = run_experiment(desk_config("arm.cfg", tmp_path / f"arm{seed}", seed=seed))
        finals.append(float(res.eval_curve[-1]))
    secs = time.perf_counter() - start
    hits = sum(f >= -5.0 for f in finals)
    ok = hits >= 3 and secs < 1200
    report(8, ok, f"{hits}/5 seeds reach -5.0 after 200 generations, finals "
                  f"{', '.join(f'{f:.1f}' for f in finals)} ({secs:.0f}s)")


# -- 9 -----------------------------------------------------------------------------

def test_c9_transports_are_bit_identical(report, tmp_path):
    runs = {}
    for name, extra in [("inprocess", {}), ("socket-thread", {"transport": "socket", "spawn": "thread"}),
                        ("socket-process", {"transport": "socket", "spawn": "process"})]:
        cfg = desk_config("pointmass.cfg", tmp_path / name, generations=10, **extra)
        runs[name] = run_experiment(cfg).out_dir
    base = runs["inprocess"]
    same = all(np.load(base / "mu.npy").tobytes() == np.load(out / "mu.npy").tobytes()
               and (base / "curve.csv").read_bytes() == (out / "curve.csv").read_bytes() for out in runs.values())
    report(9, same, "mu sequence and curve.csv " + ("identical" if same else "differ")
           + " across in-process, socket/thread and socket/process")


# -- 10 ----------------------------------------------------------------------------

def test_c10_reward_scheme(report):
    checks = {}
    pm = PointMassEnv()
    m_over_h = pm.spec.max_frames / pm.spec.horizon
    traj = run_episode(pm, pm.oracle_policy, 0)
    hit_steps = np.isclose(traj.rewards, m_over_h - 0.1)
    checks["hits pay M/H"] = hit_steps.sum() == pm.num_waypoints
    checks["other steps pay -0.1"] = np.all(np.isclose(traj.rewards[~hit_steps], -0.1))
    idle = run_episode(pm, lambda o: np.zeros(2), 0)
    checks["idle episode runs to H at -0.1"] = len(idle) == pm.spec.horizon and np.allclose(idle.rewards, -0.1)
    pm.reset(0)
    pm.set_state([pm.arena - 0.01, 0.0], [2.0, 0.0])
    _, r, done, info = pm.step(np.array([1.0, 0.0]))
    checks["collision -50 and terminates"] = done and np.isclose(r, -50.1) and info["terminated_by"] == "collision"
    arm = ArmEnv()
    arm_traj = run_episode(arm, arm.oracle_policy, 0)
    arm_hits = np.isclose(arm_traj.rewards, 1.0 - 0.1)
    checks["arm M=H pays 1 per hit"] = arm_hits.any() and np.allclose(arm_traj.rewards[~arm_hits], -0.1)
    arm.reset(0)
    while True:
        _, r, done, info = arm.step(np.array([0.0, -1.0, 0.0]))
        if done:
            break
    checks["arm joint limit -50 and terminates"] = info["terminated_by"] == "collision" and np.isclose(r, -50.1)
    fake = [run_episode(pm, lambda o: np.zeros(2), 0) for _ in range(3)]
    for t, total in zip(fake, (10.0, 4.9, 5.0)):
        t.rewards[:] = 0.0
        t.rewards[0] = total
    kept = filter_trajectories(fake, 5.0)
    checks["filter keeps reward >= 5"] = [t.cumulative_reward for t in kept] == [10.0, 5.0]
    failed = [k for k, v in checks.items() if not v]
    report(10, not failed, f"{len(checks) - len(failed)}/{len(checks)} scripted checks hold"
           + (f"; failed: {', '.join(failed)}" if failed else ""))
