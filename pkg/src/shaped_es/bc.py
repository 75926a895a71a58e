"""Worker-side evaluation of a parameter vector and behaviour-cloning refinement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .envs.base import Trajectory, WaypointEnv, run_episode
from .params import MlpNet, NetShape, mse_loss_and_grad, sgd_step, unflatten

log = logging.getLogger(__name__)

DEFAULT_SEEDS_PER_MEMBER = 2
DEFAULT_BC_STEPS = 20
DEFAULT_BC_LR = 0.01


class EvaluationError(RuntimeError):
    """Every episode of a member evaluation failed."""


@dataclass
class WorkerResult:
    reward: float
    theta_star: np.ndarray
    trajectory_refs: list = field(default_factory=list)
    episode_rewards: list = field(default_factory=list)
    valid: bool = True


def policy_shape(env: WaypointEnv, hidden=None) -> NetShape:
    return NetShape.mlp(env.spec.state_dim, env.policy_hidden if hidden is None else hidden, env.spec.action_dim)


def make_policy(net: MlpNet):
    """Single-observation callable without the batch bookkeeping of ``forward``."""
    layers = list(zip(net.weights, net.biases, net.shape.activations))

    def act(obs):
        h = obs
        for w, b, kind in layers:
            h = h @ w + b
            if kind == "relu":
                h = np.maximum(h, 0.0)
        return h

    return act


def evaluate_member(env: WaypointEnv, shape: NetShape, theta, seeds) -> tuple[float, list[Trajectory]]:
    """Run one episode per seed; returns the mean cumulative reward over valid episodes."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one evaluation seed is required")
    policy = make_policy(unflatten(shape, theta))
    trajs = []
    for seed in seeds:
        try:
            traj = run_episode(env, policy, seed)
        except Exception:  # env failures invalidate only this episode
            log.exception("episode with seed %s failed", seed)
            continue
        if not np.all(np.isfinite(traj.rewards)):
            log.warning("episode with seed %s produced non-finite rewards", seed)
            continue
        trajs.append(traj)
    if not trajs:
        raise EvaluationError(f"all {len(seeds)} episodes failed")
    return float(np.mean([t.cumulative_reward for t in trajs])), trajs


def bc_loss(shape: NetShape, theta, states, labels) -> float:
    loss, _ = mse_loss_and_grad(unflatten(shape, theta), states, labels)
    return loss


def bc_refine(shape: NetShape, theta, states, labels, steps: int = DEFAULT_BC_STEPS, lr: float = DEFAULT_BC_LR) -> np.ndarray:
    """Full-batch gradient descent of the policy onto the IDM action labels."""
    theta = np.asarray(theta, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    if len(states) == 0:
        return theta.copy()
    if steps < 1:
        raise ValueError("steps must be at least 1")
    labels = np.asarray(labels, dtype=np.float64)
    for _ in range(steps):
        _, grad = mse_loss_and_grad(unflatten(shape, theta), states, labels)
        theta = sgd_step(theta, grad, lr)
    return theta
