"""Waypoint-task plumbing shared by the built-in environments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

GOAL = "goal"
COLLISION = "collision"
FRAME_LIMIT = "frame_limit"
TERMINATIONS = (GOAL, COLLISION, FRAME_LIMIT)


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    waypoint_dim: int
    max_frames: int  # M, numerator of the waypoint reward
    horizon: int  # H, episode step limit
    waypoint_radius: float
    step_penalty: float = -0.1
    collision_penalty: float = -50.0

    @property
    def waypoint_reward(self) -> float:
        return self.max_frames / self.horizon


def waypoint_reward(agent_pos, next_wp, spec: EnvSpec, collided: bool = False) -> tuple[float, bool]:
    """Reward for one step and whether the next waypoint was reached.

    Reaching the waypoint pays ``M/H``; every step pays the step penalty; a
    collision adds the collision penalty (the caller terminates the episode).
    """
    reward = spec.step_penalty
    advanced = False
    if collided:
        return reward + spec.collision_penalty, False
    if next_wp is not None:
        diff = np.asarray(agent_pos, dtype=np.float64) - np.asarray(next_wp, dtype=np.float64)
        if math.sqrt(float(diff @ diff)) <= spec.waypoint_radius:
            reward += spec.waypoint_reward
            advanced = True
    return reward, advanced


def local_waypoint(agent_pos, next_wp, reach_limit: float) -> np.ndarray:
    """Point on the segment towards ``next_wp`` no further than ``reach_limit`` from the agent."""
    agent_pos = np.asarray(agent_pos, dtype=np.float64)
    next_wp = np.asarray(next_wp, dtype=np.float64)
    offset = next_wp - agent_pos
    dist = math.sqrt(float(offset @ offset))
    if dist <= reach_limit:
        return next_wp.copy()
    return agent_pos + offset * (reach_limit / dist)


def bezier_point(p0, p1, p2, t) -> np.ndarray:
    """Quadratic Bernstein form ``(1-t)^2 P0 + 2t(1-t) P1 + t^2 P2``; ``t`` may be an array."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0) or not np.all(np.isfinite(t_arr)):
        raise ValueError("Bezier parameter t must lie in [0, 1]")
    p0, p1, p2 = (np.asarray(p, dtype=np.float64) for p in (p0, p1, p2))
    tt = t_arr[..., None]
    return (1 - tt) ** 2 * p0 + 2 * tt * (1 - tt) * p1 + tt**2 * p2


@dataclass
class Trajectory:
    """One episode. Row ``t`` of each array describes the transition taken at step ``t``.

    ``waypoints`` holds the local waypoint offered to the agent (relative to it),
    ``reached`` the displacement the executed action actually produced.
    """

    states: np.ndarray
    waypoints: np.ndarray
    reached: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated_by: str
    meta: dict = field(default_factory=dict)

    @property
    def cumulative_reward(self) -> float:
        return float(np.sum(self.rewards))

    def __len__(self) -> int:
        return int(self.rewards.shape[0])


class WaypointEnv:
    """Base class: subclasses implement the physics, track generation and oracle."""

    name = "base"
    spec: EnvSpec
    policy_hidden: tuple[int, ...] = (16,)
    idm_hidden: tuple[int, ...] = (20, 20)
    idm_input_dim: int

    def reset(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        raise NotImplementedError

    def local_target(self) -> np.ndarray:
        """Current local waypoint relative to the agent."""
        raise NotImplementedError

    def idm_features(self, states, targets) -> np.ndarray:
        """Inverse-dynamics input rows from observations and relative targets."""
        raise NotImplementedError

    def oracle_action(self, states, targets) -> np.ndarray:
        """Closed-form action that produces the relative displacement ``targets``."""
        raise NotImplementedError

    def clip_action(self, action) -> np.ndarray:
        return np.minimum(np.maximum(action, -1.0), 1.0)

    def reference_reward(self, seed: int) -> float:
        """Reward of the analytic oracle controller on the episode with this seed."""
        traj = run_episode(self, self.oracle_policy, seed)
        return traj.cumulative_reward

    def oracle_policy(self, obs) -> np.ndarray:
        return self.oracle_action(obs[None, :], self.local_target()[None, :])[0]


def run_episode(env: WaypointEnv, policy: Callable[[np.ndarray], np.ndarray], seed: int) -> Trajectory:
    obs = env.reset(seed)
    states, wps, reached, actions, rewards = [], [], [], [], []
    terminated_by = FRAME_LIMIT
    done = False
    while not done:
        target = env.local_target()
        action = env.clip_action(np.asarray(policy(obs), dtype=np.float64))
        states.append(obs)
        wps.append(target)
        next_obs, reward, done, info = env.step(action)
        reached.append(info["reached"])
        actions.append(info["action"])
        rewards.append(reward)
        if done:
            terminated_by = info["terminated_by"]
        obs = next_obs
    return Trajectory(
        states=np.array(states),
        waypoints=np.array(wps),
        reached=np.array(reached),
        actions=np.array(actions),
        rewards=np.array(rewards),
        terminated_by=terminated_by,
        meta={"env": env.name, "seed": int(seed)},
    )
