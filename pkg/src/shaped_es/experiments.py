"""Run an experiment end to end and write its curves; dump stored trajectories."""

from __future__ import annotations

import csv
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .envs import make_env
from .runtime.master import Master, eval_seeds
from .runtime.store import TrajectoryStore
from .runtime.transport import inprocess_hub, socket_hub

log = logging.getLogger(__name__)

CURVE_HEADER = ["generation", "eval_reward", "best_train_reward", "mean_train_reward", "dropped", "basis_rank"]
IDM_HEADER = ["generation", "train_loss", "test_loss", "train_samples", "test_samples"]
TIMING_HEADER = ["generation", "seconds", "elapsed"]


@dataclass
class RunResult:
    out_dir: Path
    eval_curve: np.ndarray
    mu_history: np.ndarray
    reference_reward: float
    idm_test_loss: np.ndarray
    seconds: float

    def generations_to(self, threshold: float) -> int | None:
        """First generation whose evaluated reward reaches ``threshold``."""
        hits = np.flatnonzero(self.eval_curve >= threshold)
        return int(hits[0]) if hits.size else None


def reference_reward(cfg: RunConfig) -> float:
    """Mean reward of the analytic controller on the evaluation tracks."""
    env = make_env(cfg.env, **cfg.env_kwargs)
    return float(np.mean([env.reference_reward(s) for s in eval_seeds(cfg.eval_episodes)]))


def _fmt(x) -> str:
    return repr(float(x))


def run_experiment(cfg: RunConfig, out_dir=None) -> RunResult:
    """Run ``cfg.generations`` generations and write the run directory.

    The directory holds ``config.txt`` (resolved settings), ``curve.csv``,
    ``idm_loss.csv``, ``timing.csv``, ``mu.npy`` and ``summary.json``.
    Everything except the timing file is a deterministic function of the config.
    """
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    store_root = None
    if cfg.method == "shaped":
        store_root = Path(cfg.store) if cfg.store else out / "store"
    ref = reference_reward(cfg)
    total_workers = cfg.workers + cfg.eval_workers
    if cfg.transport == "socket":
        hub = socket_hub(total_workers, store_root=None, spawn=cfg.spawn)
    else:
        hub = inprocess_hub(total_workers)
    t_start = time.perf_counter()
    curve, tests = [], []
    with hub, open(out / "curve.csv", "w", newline="") as fc, open(out / "idm_loss.csv", "w", newline="") as fi, \
            open(out / "timing.csv", "w", newline="") as ft:
        wc, wi, wt = csv.writer(fc), csv.writer(fi), csv.writer(ft)
        wc.writerow(CURVE_HEADER)
        wi.writerow(IDM_HEADER)
        wt.writerow(TIMING_HEADER)
        master = Master(cfg, hub, store_root=store_root)
        for _ in range(cfg.generations):
            rep = master.step()
            wc.writerow([rep.generation, _fmt(rep.eval_reward), _fmt(rep.best_train_reward),
                         _fmt(np.nanmean(rep.rewards)), len(rep.dropped), rep.basis_rank])
            if master.idm is not None:
                wi.writerow([rep.generation, _fmt(rep.idm_train_loss), _fmt(rep.idm_test_loss),
                             len(master.idm.train_set), len(master.idm.test_set)])
            wt.writerow([rep.generation, f"{rep.seconds:.4f}", f"{time.perf_counter() - t_start:.4f}"])
            for f in (fc, fi, ft):
                f.flush()
            curve.append(rep.eval_reward)
            tests.append(rep.idm_test_loss)
            log.info("gen %d eval %.3f best-train %.3f (%.2fs)", rep.generation, rep.eval_reward,
                     rep.best_train_reward, rep.seconds)
        mu_history = np.array(master.mu_history)
    seconds = time.perf_counter() - t_start
    np.save(out / "mu.npy", mu_history)
    result = RunResult(out, np.array(curve), mu_history, ref, np.array(tests), seconds)
    summary = {
        "reference_reward": ref,
        "final_eval_reward": float(curve[-1]),
        "best_eval_reward": float(np.nanmax(curve)) if np.any(np.isfinite(curve)) else None,
        "generations_to_80pct": result.generations_to(0.8 * ref),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return result


DUMP_HEADER_BASE = ["ref", "generation", "slot", "episode", "t"]


def dump_store(root, generation=None, slot=None, stream=None) -> int:
    """Write every stored transition as CSV; returns the number of corrupt records skipped."""
    stream = sys.stdout if stream is None else stream
    store = TrajectoryStore(root)
    refs = store.refs(generation, slot)
    writer = csv.writer(stream)
    header_written = False
    corrupt = 0
    for ref in refs:
        try:
            traj = store.load(ref)
        except Exception as exc:
            corrupt += 1
            log.warning("skipping corrupt record %s: %s", ref, exc)
            continue
        sd, wd, ad = traj.states.shape[1], traj.waypoints.shape[1], traj.actions.shape[1]
        if not header_written:
            writer.writerow(_dump_header(sd, wd, ad))
            header_written = True
        for t in range(len(traj)):
            row = [ref, traj.meta.get("generation", ""), traj.meta.get("slot", ""), traj.meta.get("episode", ""), t]
            row += [repr(float(v)) for v in np.concatenate([traj.states[t], traj.waypoints[t], traj.reached[t],
                                                              traj.actions[t], traj.rewards[t : t + 1]])]
            writer.writerow(row)
    if not header_written:
        writer.writerow(DUMP_HEADER_BASE + ["reward"])
    return corrupt


def _dump_header(sd, wd, ad) -> list[str]:
    return (DUMP_HEADER_BASE + [f"s{i}" for i in range(sd)] + [f"w{i}" for i in range(wd)]
            + [f"d{i}" for i in range(wd)] + [f"a{i}" for i in range(ad)] + ["reward"])


def bench_es(function: str = "sphere", dim: int = 20, sigma: float = 0.1, pairs: int = 32, gamma: float = 0.05,
             iterations: int = 500, seed: int = 0, start_norm: float = 5.0, tol: float = 0.1,
             rank: bool = False) -> dict:
    """Antithetic ES on a synthetic objective; returns the iteration count and final distance.

    Raw fitness differences are used unless ``rank`` is set, in which case the
    rank-transformed values drive the update as in the RL runs.
    """
    from .es import SearchDistribution, rank_transform, sample_population, vanilla_es_update

    objectives = {
        "sphere": lambda x: -np.sum(x * x, axis=-1),
        "rosenbrock": lambda x: -np.sum(100.0 * (x[..., 1:] - x[..., :-1] ** 2) ** 2 + (1 - x[..., :-1]) ** 2, axis=-1),
    }
    optima = {"sphere": np.zeros(dim), "rosenbrock": np.ones(dim)}
    if function not in objectives:
        raise ValueError(f"unknown function {function!r}; choose from {sorted(objectives)}")
    f, opt = objectives[function], optima[function]
    rng = np.random.default_rng(seed)
    d = rng.standard_normal(dim)
    mu = opt + start_norm * d / np.linalg.norm(d)
    for it in range(1, iterations + 1):
        pop = sample_population(SearchDistribution(mu, sigma), pairs, rng, it)
        fitness = f(pop.members)
        shaped = rank_transform(fitness) if rank else fitness
        mu = vanilla_es_update(mu, pop.eps, shaped[:pairs], shaped[pairs:], gamma, 1.0, sigma)
        if np.linalg.norm(mu - opt) < tol:
            break
    return {"function": function, "iterations": it, "distance": float(np.linalg.norm(mu - opt)),
            "converged": bool(np.linalg.norm(mu - opt) < tol)}
