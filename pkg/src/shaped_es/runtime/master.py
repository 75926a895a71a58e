"""Master side of the training loop.

One generation: build the guided basis from the previous refinements, sample
the population, hand members out to workers, train the inverse dynamics model
while results come in, then apply the antithetic update and derive the next
surrogate gradients.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..bc import evaluate_member, policy_shape
from ..config import RunConfig
from ..envs import make_env
from ..es import (CmaState, SearchDistribution, orthogonalize, rank_transform, sample_population,
                  surrogate_gradients, vanilla_es_update)
from ..idm import IdmTrainer
from ..params import flatten, init_net, make_net
from .messages import MODE_EVAL, MODE_TRAIN, Configure, ParamsDown, ResultUp
from .store import TrajectoryStore

log = logging.getLogger(__name__)

EVAL_SEED_BASE = 1_000_000
_SEED_SPACE = 2**31 - 1


def eval_seeds(count: int) -> list[int]:
    """Fixed evaluation tracks, shared by every run and method."""
    return [EVAL_SEED_BASE + j for j in range(count)]


class GenerationFailed(RuntimeError):
    pass


@dataclass
class GenerationReport:
    generation: int
    rewards: np.ndarray  # per slot, NaN where dropped
    theta_star: np.ndarray  # 2P x n, NaN rows where dropped
    dropped: list
    best_slot: int
    best_train_reward: float
    eval_reward: float
    eval_rewards: np.ndarray
    idm_train_loss: float = float("nan")
    idm_test_loss: float = float("nan")
    phi_sent: bool = False
    basis_rank: int = 0
    seconds: float = 0.0
    mu: np.ndarray = field(default=None, repr=False)


class Master:
    """Drives synchronous generations over a :class:`~shaped_es.runtime.transport.Hub`.

    Worker ids ``0 .. cfg.workers-1`` train; ids from ``cfg.workers`` upward only
    evaluate. With no evaluation workers the master evaluates the best member
    itself, which yields the same numbers.
    """

    def __init__(self, cfg: RunConfig, hub, store_root=None):
        self.cfg = cfg
        self.hub = hub
        self.env = make_env(cfg.env, **cfg.env_kwargs)
        self.pshape = policy_shape(self.env, cfg.policy_hidden or None)
        init_rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
        net = init_net(self.pshape, init_rng)
        if cfg.init_output == "zero":
            net = make_net(self.pshape, net.weights[:-1] + (np.zeros_like(net.weights[-1]),),
                           net.biases[:-1] + (np.zeros_like(net.biases[-1]),))
        self.mu = flatten(net)
        self.n = self.mu.size
        self.num_pairs = cfg.population // 2
        self.generation = 0
        self.basis = np.zeros((self.n, 0))
        self.store = TrajectoryStore(store_root) if store_root else None
        self.shaped = cfg.method == "shaped"
        if self.shaped and self.store is None:
            raise ValueError("shaped runs need a trajectory store for inverse dynamics training")
        self.idm = None
        if self.shaped:
            self.idm = IdmTrainer(self.env, seed=cfg.seed + 7919, lr=cfg.idm_lr, batch_size=cfg.idm_batch,
                                  epochs=cfg.idm_epochs, max_steps=cfg.idm_max_steps or None,
                                  reward_threshold=cfg.filter_threshold, hidden=cfg.idm_hidden or None)
        self.cma = None
        if cfg.method == "cma":
            self.cma = CmaState(self.mu.copy(), (cfg.sigma**2 / self.n) * np.eye(self.n), min_var=cfg.cma_min_var)
        self.train_workers = list(range(cfg.workers))
        self.eval_workers = list(range(cfg.workers, cfg.workers + cfg.eval_workers))
        self.eval_seed_list = eval_seeds(cfg.eval_episodes)
        self.mu_history = [self.mu.copy()]
        settings = cfg.worker_settings(str(store_root) if store_root else None)
        for wid in self.train_workers + self.eval_workers:
            hub.send(wid, Configure(settings=settings, worker_id=wid))

    # -- sampling -----------------------------------------------------------

    def _sample(self, rng: np.random.Generator):
        if self.cma is not None:
            half = self.cma.sample(self.num_pairs, rng)
            # mirror about the mean so every method shares the paired layout
            members = np.vstack([half, 2 * self.cma.mu - half])
            return members, None
        alpha = self.cfg.alpha if self.shaped else 1.0
        dist = SearchDistribution(self.mu, self.cfg.sigma, alpha, self.basis)
        pop = sample_population(dist, self.num_pairs, rng, self.generation)
        return pop.members, pop.eps

    # -- collection ---------------------------------------------------------

    def _dispatch(self, slot, members, seeds, phi, slot_seeds):
        wid = self.train_workers[slot % len(self.train_workers)]
        self.hub.send(wid, ParamsDown(generation=self.generation, slot=slot, theta=members[slot], seeds=seeds,
                                      phi=phi, mode=MODE_TRAIN, rng_seed=int(slot_seeds[slot]), worker_id=wid))

    def _collect(self, slots, mode: int, resend) -> dict[int, ResultUp]:
        """Wait for one result per slot; a slot that times out is re-sent once."""
        results: dict[int, ResultUp] = {}
        retried = False
        deadline = time.monotonic() + self.cfg.timeout
        while len(results) < len(slots):
            msg = self.hub.recv(timeout=max(0.0, deadline - time.monotonic()))
            if msg is None:
                missing = sorted(set(slots) - set(results))
                if retried:
                    log.error("generation %d: giving up on slots %s", self.generation, missing)
                    break
                log.warning("generation %d: re-sending slots %s after timeout", self.generation, missing)
                for slot in missing:
                    resend(slot)
                retried = True
                deadline = time.monotonic() + self.cfg.timeout
                continue
            if not isinstance(msg, ResultUp) or msg.generation != self.generation or msg.mode != mode:
                log.info("discarding %s from generation %s", type(msg).__name__, getattr(msg, "generation", "?"))
                continue
            if msg.slot not in slots or msg.slot in results:
                continue
            results[msg.slot] = msg
        return results

    def _train_idm(self, out: dict) -> None:
        out["train"] = self.idm.train()
        out["test"] = self.idm.test_loss()

    # -- evaluation ---------------------------------------------------------

    def _evaluate(self, theta) -> np.ndarray:
        seeds = self.eval_seed_list
        if not self.eval_workers:
            _, trajs = evaluate_member(self.env, self.pshape, theta, seeds)
            return np.array([t.cumulative_reward for t in trajs])
        chunks = {j: seeds[j :: len(self.eval_workers)] for j in range(len(self.eval_workers))}
        chunks = {j: c for j, c in chunks.items() if c}

        def send(j):
            wid = self.eval_workers[j]
            self.hub.send(wid, ParamsDown(generation=self.generation, slot=j, theta=theta, seeds=chunks[j],
                                          mode=MODE_EVAL, worker_id=wid))

        for j in chunks:
            send(j)
        got = self._collect(sorted(chunks), MODE_EVAL, send)
        per_seed = np.full(len(seeds), np.nan)
        for j, res in got.items():
            if res.valid and len(res.episode_rewards) == len(chunks[j]):
                per_seed[j :: len(self.eval_workers)] = res.episode_rewards
        return per_seed

    # -- one generation -----------------------------------------------------

    def step(self) -> GenerationReport:
        cfg = self.cfg
        g = self.generation
        t0 = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, g])
        members, eps = self._sample(rng)
        seeds = [int(s) for s in rng.integers(0, _SEED_SPACE, size=cfg.episodes_per_member)]
        slot_seeds = rng.integers(0, 2**63 - 1, size=len(members), dtype=np.int64)
        phi = flatten(self.idm.model) if self.shaped and self.idm.trained else None

        losses: dict = {}
        trainer = None
        if self.shaped and len(self.idm.train_set):
            trainer = threading.Thread(target=self._train_idm, args=(losses,), name="idm-trainer")
            trainer.start()

        slots = list(range(len(members)))
        for slot in slots:
            self._dispatch(slot, members, seeds, phi, slot_seeds)
        results = self._collect(slots, MODE_TRAIN, lambda s: self._dispatch(s, members, seeds, phi, slot_seeds))
        if trainer is not None:
            trainer.join()

        P = self.num_pairs
        ok = {s for s, r in results.items() if r.valid and np.isfinite(r.reward)}
        pairs = [i for i in range(P) if i in ok and i + P in ok]
        dropped = sorted(set(slots) - set(pairs) - {i + P for i in pairs})
        if dropped:
            log.warning("generation %d: dropping slots %s", g, dropped)
        rewards = np.full(len(members), np.nan)
        theta_star = np.full_like(members, np.nan)
        for s in slots:
            if s in results and s not in dropped:
                rewards[s] = results[s].reward
                theta_star[s] = results[s].theta_star

        if not pairs:
            raise GenerationFailed(f"generation {g}: no complete antithetic pair came back")
        keep = np.array(pairs + [i + P for i in pairs])
        if self.cma is not None:
            self.cma.update(members[keep], rewards[keep], cfg.elite_fraction, cfg.weight_decay)
            mu_next = self.cma.mu.copy()
        else:
            shaped_f = rank_transform(rewards[keep])
            m = len(pairs)
            mu_next = vanilla_es_update(self.mu, eps[pairs], shaped_f[:m], shaped_f[m:], cfg.gamma, cfg.beta,
                                        cfg.sigma)
        basis = np.zeros((self.n, 0))
        if self.shaped and phi is not None:
            deltas = surrogate_gradients(theta_star[keep].T, mu_next, cfg.eta)
            basis = orthogonalize(deltas)
        self.basis = basis

        if self.shaped:
            self.idm.add(self.store.read(generation=g), g)

        best = int(keep[np.argmax(rewards[keep])])
        per_seed = self._evaluate(members[best])
        report = GenerationReport(
            generation=g, rewards=rewards, theta_star=theta_star, dropped=dropped, best_slot=best,
            best_train_reward=float(rewards[best]),
            eval_reward=float(np.nanmean(per_seed)) if np.any(np.isfinite(per_seed)) else float("nan"),
            eval_rewards=per_seed, idm_train_loss=losses.get("train", float("nan")),
            idm_test_loss=losses.get("test", float("nan")), phi_sent=phi is not None, basis_rank=basis.shape[1],
            mu=mu_next,
        )
        self.mu = mu_next
        self.mu_history.append(mu_next.copy())
        self.generation += 1
        report.seconds = time.perf_counter() - t0
        return report
