"""Three-link arm following a quadratic Bezier path of end-effector waypoints.

Joints are (base yaw, shoulder pitch, elbow pitch). The upper arm, forearm and
a rigid tool segment collinear with the forearm lie in a vertical plane that
yaws about the base. Actions are joint velocities: ``q' = q + a dt``.
"""

from __future__ import annotations

import math

import numpy as np

from .base import COLLISION, FRAME_LIMIT, GOAL, EnvSpec, WaypointEnv, bezier_point, local_waypoint, waypoint_reward

CONTROL_POINT = (0.75, 0.15, 0.45)


def forward_kinematics(q, links) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    l1, l2, l3 = links
    yaw, shoulder, elbow = q[..., 0], q[..., 1], q[..., 2]
    radial = l1 * np.cos(shoulder) + (l2 + l3) * np.cos(shoulder + elbow)
    height = l1 * np.sin(shoulder) + (l2 + l3) * np.sin(shoulder + elbow)
    return np.stack([radial * np.cos(yaw), radial * np.sin(yaw), height], axis=-1)


def jacobian(q, links) -> np.ndarray:
    """d(ee)/dq, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    l1, l2, l3 = links
    l23 = l2 + l3
    yaw, sh, el = q[..., 0], q[..., 1], q[..., 2]
    radial = l1 * np.cos(sh) + l23 * np.cos(sh + el)
    d_rad_sh = -l1 * np.sin(sh) - l23 * np.sin(sh + el)
    d_rad_el = -l23 * np.sin(sh + el)
    d_h_sh = l1 * np.cos(sh) + l23 * np.cos(sh + el)
    d_h_el = l23 * np.cos(sh + el)
    cy, sy = np.cos(yaw), np.sin(yaw)
    zero = np.zeros_like(yaw)
    rows = [
        [-radial * sy, d_rad_sh * cy, d_rad_el * cy],
        [radial * cy, d_rad_sh * sy, d_rad_el * sy],
        [zero, d_h_sh, d_h_el],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _ee_scalar(q, links) -> np.ndarray:
    l1, l23 = links[0], links[1] + links[2]
    yaw, sh, el = float(q[0]), float(q[1]), float(q[2])
    radial = l1 * math.cos(sh) + l23 * math.cos(sh + el)
    height = l1 * math.sin(sh) + l23 * math.sin(sh + el)
    return np.array([radial * math.cos(yaw), radial * math.sin(yaw), height])


class ArmEnv(WaypointEnv):
    name = "arm"
    policy_hidden = (16,)
    idm_hidden = (20, 20, 20)

    def __init__(self, num_waypoints: int = 100, horizon: int = 100, max_frames: int = 100,
                 waypoint_radius: float = 0.1, reach_limit: float = 0.08, dt: float = 0.1,
                 links=(0.5, 0.4, 0.1), start_q=(0.0, 0.8, -1.2), control_point=CONTROL_POINT):
        self.spec = EnvSpec(state_dim=9, action_dim=3, waypoint_dim=3, max_frames=max_frames,
                            horizon=horizon, waypoint_radius=waypoint_radius)
        self.num_waypoints = num_waypoints
        self.reach_limit = reach_limit
        self.dt = dt
        self.links = tuple(float(x) for x in links)
        self.start_q = np.asarray(start_q, dtype=np.float64)
        self.control_point = np.asarray(control_point, dtype=np.float64)
        self.q_low = np.array([-2.5, -0.5, -2.8])
        self.q_high = np.array([2.5, 2.2, 0.3])
        self.idm_input_dim = 9
        self.q = self.start_q.copy()
        self.qdot = np.zeros(3)
        self._ee = _ee_scalar(self.q, self.links)
        self.track = np.zeros((num_waypoints, 3))
        self.track_t = np.zeros(num_waypoints)
        self._target = np.zeros(3)
        self.index = 0
        self.t = 0

    def ee(self, q=None) -> np.ndarray:
        if q is None:
            return self._ee
        return forward_kinematics(q, self.links)

    def sample_target(self, rng: np.random.Generator) -> np.ndarray:
        """Random goal in the upper hemisphere, inside the arm's comfortable reach."""
        radius = rng.uniform(0.5, 0.85)
        azimuth = rng.uniform(-np.pi / 2, np.pi / 2)
        elevation = rng.uniform(0.15, 1.1)
        return radius * np.array([np.cos(elevation) * np.cos(azimuth), np.cos(elevation) * np.sin(azimuth), np.sin(elevation)])

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.q = self.start_q.copy()
        self.qdot = np.zeros(3)
        self._ee = _ee_scalar(self.q, self.links)
        p0 = self.ee()
        p2 = self.sample_target(rng)
        self.track_t = np.arange(1, self.num_waypoints + 1) / self.num_waypoints
        self.track = bezier_point(p0, self.control_point, p2, self.track_t)
        self.bezier = (p0, self.control_point.copy(), p2)
        self.index = 0
        self.t = 0
        return self._obs()

    @property
    def next_waypoint(self) -> np.ndarray:
        return self.track[min(self.index, len(self.track) - 1)]

    def local_target(self) -> np.ndarray:
        return self._target

    def _obs(self) -> np.ndarray:
        ee = self.ee()
        self._target = local_waypoint(ee, self.next_waypoint, self.reach_limit) - ee
        return np.concatenate([self.q, self.qdot, self.next_waypoint - self.ee()])

    def step(self, action):
        action = self.clip_action(np.asarray(action, dtype=np.float64))
        old_ee = self.ee()
        self.q = self.q + action * self.dt
        self.qdot = action
        self._ee = ee = _ee_scalar(self.q, self.links)
        self.t += 1
        collided = bool(np.any(self.q < self.q_low) or np.any(self.q > self.q_high) or ee[2] < -0.1)
        reward, advanced = waypoint_reward(ee, self.next_waypoint, self.spec, collided)
        terminated_by = None
        if collided:
            terminated_by = COLLISION
        else:
            if advanced:
                self.index += 1
            if self.index >= self.num_waypoints:
                terminated_by = GOAL
            elif self.t >= self.spec.horizon:
                terminated_by = FRAME_LIMIT
        info = {"reached": ee - old_ee, "action": action, "terminated_by": terminated_by, "advanced": advanced}
        return self._obs(), reward, terminated_by is not None, info

    def idm_features(self, states, targets) -> np.ndarray:
        states = np.atleast_2d(states)
        targets = np.atleast_2d(targets)
        return np.hstack([states[:, 0:6], targets / self.dt])

    def oracle_action(self, states, targets) -> np.ndarray:
        """Jacobian pseudo-inverse step towards the relative target, clipped."""
        q = np.atleast_2d(states)[:, 0:3]
        disp = np.atleast_2d(targets)
        jac = jacobian(q, self.links)
        vel = np.einsum("bij,bj->bi", np.linalg.pinv(jac), disp) / self.dt
        return np.clip(vel, -1.0, 1.0)
