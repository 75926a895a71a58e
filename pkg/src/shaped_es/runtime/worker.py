"""Worker side of the training loop: evaluate, record, aggregate, refine, report."""

from __future__ import annotations

import logging

import numpy as np

from ..bc import DEFAULT_BC_LR, DEFAULT_BC_STEPS, EvaluationError, bc_refine, evaluate_member, policy_shape
from ..envs import make_env
from ..idm import idm_predict, idm_shape
from ..params import unflatten
from .messages import MODE_EVAL, Configure, ParamsDown, ProtocolError, ResultUp, Shutdown
from .store import TrajectoryStore

log = logging.getLogger(__name__)


class Worker:
    """Stateful handler for one worker process.

    Each population slot served by this worker keeps its own append-only buffer
    of visited (state, local waypoint) pairs; labels are recomputed from the
    latest inverse dynamics snapshot every generation.
    """

    def __init__(self, worker_id: int, store_root=None, env_name: str | None = None):
        self.worker_id = worker_id
        self.store_root = store_root
        self.env_name = env_name
        self.settings = None
        self.env = None
        self.store = None
        self.buffers: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        self.latest_generation = -1

    def configure(self, settings: dict) -> None:
        if self.env_name is not None and settings["env"] != self.env_name:
            raise ValueError(f"worker started for env {self.env_name!r} but master runs {settings['env']!r}")
        self.settings = settings
        self.env = make_env(settings["env"], **settings.get("env_kwargs", {}))
        self.pshape = policy_shape(self.env, settings.get("policy_hidden"))
        self.ishape = idm_shape(self.env, settings.get("idm_hidden"))
        root = self.store_root or settings.get("store_root")
        self.store = TrajectoryStore(root) if root else None

    def buffer_size(self, slot: int) -> int:
        return sum(len(s) for s, _ in self.buffers.get(slot, []))

    def handle(self, msg):
        """Process one message; returns a reply or None."""
        if isinstance(msg, Configure):
            self.configure(msg.settings)
            return None
        if not isinstance(msg, ParamsDown):
            log.warning("worker %d ignoring unexpected %s", self.worker_id, type(msg).__name__)
            return None
        if self.settings is None:
            raise RuntimeError("worker received parameters before configuration")
        if msg.generation < self.latest_generation:
            log.info("worker %d dropping stale parameters for generation %d", self.worker_id, msg.generation)
            return None
        self.latest_generation = msg.generation
        if msg.mode == MODE_EVAL:
            return self._evaluate_only(msg)
        return self._train(msg)

    def _evaluate_only(self, msg: ParamsDown) -> ResultUp:
        try:
            reward, trajs = evaluate_member(self.env, self.pshape, msg.theta, msg.seeds)
        except EvaluationError:
            return ResultUp(msg.generation, msg.slot, float("nan"), msg.theta, valid=False, mode=MODE_EVAL,
                            worker_id=self.worker_id)
        return ResultUp(msg.generation, msg.slot, reward, msg.theta,
                        episode_rewards=np.array([t.cumulative_reward for t in trajs]),
                        mode=MODE_EVAL, worker_id=self.worker_id)

    def _train(self, msg: ParamsDown) -> ResultUp:
        theta = np.asarray(msg.theta, dtype=np.float64)
        try:
            reward, trajs = evaluate_member(self.env, self.pshape, theta, msg.seeds)
        except EvaluationError:
            log.error("worker %d: every episode failed for slot %d", self.worker_id, msg.slot)
            return ResultUp(msg.generation, msg.slot, float("nan"), theta, valid=False, worker_id=self.worker_id)
        refs = []
        if self.store is not None:
            for ep, traj in enumerate(trajs):
                refs.append(self.store.write(traj, msg.generation, msg.slot, ep))
        buf = self.buffers.setdefault(msg.slot, [])
        for traj in trajs:
            buf.append((traj.states, traj.waypoints))
        theta_star = theta
        steps = int(self.settings.get("bc_steps", DEFAULT_BC_STEPS))
        if msg.phi is not None and steps > 0:
            states, targets = self._refinement_batch(msg.slot, trajs, np.random.default_rng(msg.rng_seed))
            phi = unflatten(self.ishape, msg.phi)
            labels = idm_predict(phi, self.env, states, targets, clip=True)
            theta_star = bc_refine(self.pshape, theta, states, labels, steps=steps,
                                   lr=float(self.settings.get("bc_lr", DEFAULT_BC_LR)))
        return ResultUp(msg.generation, msg.slot, reward, theta_star,
                        episode_rewards=np.array([t.cumulative_reward for t in trajs]),
                        trajectory_refs=refs, worker_id=self.worker_id)

    def _refinement_batch(self, slot: int, trajs, rng: np.random.Generator):
        """Current-generation transitions plus a capped random draw from the older buffer."""
        cur_s = np.vstack([t.states for t in trajs])
        cur_w = np.vstack([t.waypoints for t in trajs])
        older = self.buffers[slot][: -len(trajs)]
        cap = int(self.settings.get("bc_max_samples", 512))
        if older and cap > 0:
            old_s = np.vstack([s for s, _ in older])
            old_w = np.vstack([w for _, w in older])
            if len(old_s) > cap:
                idx = np.sort(rng.choice(len(old_s), size=cap, replace=False))
                old_s, old_w = old_s[idx], old_w[idx]
            cur_s = np.vstack([cur_s, old_s])
            cur_w = np.vstack([cur_w, old_w])
        return cur_s, cur_w


def worker_loop(conn, worker: Worker) -> None:
    """Serve messages until Shutdown or the connection closes."""
    while True:
        try:
            msg = conn.recv()
        except ProtocolError:
            log.exception("worker %d: malformed message skipped", worker.worker_id)
            continue
        except (ConnectionError, OSError):
            log.warning("worker %d: connection lost", worker.worker_id)
            break
        if msg is None or isinstance(msg, Shutdown):
            break
        try:
            reply = worker.handle(msg)
        except Exception:
            log.exception("worker %d failed while handling %s", worker.worker_id, type(msg).__name__)
            if isinstance(msg, ParamsDown):
                reply = ResultUp(msg.generation, msg.slot, float("nan"), np.asarray(msg.theta), valid=False,
                                 mode=msg.mode, worker_id=worker.worker_id)
            else:
                continue
        if reply is not None:
            conn.send(reply)
    conn.close()
