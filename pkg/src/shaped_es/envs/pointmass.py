"""2-D point-mass navigator following a random waypoint track.

Dynamics (explicit Euler, per step of ``dt``)::

    p' = p + v dt
    v' = (v + a dt) (1 - drag),  |v'| clamped to max_speed

Because ``p'`` does not depend on ``a``, an action first shows up in the
position two steps later. The hindsight target stored for each transition and
the analytic inverse therefore use the two-step displacement ``p_{t+2} - p_t``.
"""

from __future__ import annotations

import math

import numpy as np

from .base import COLLISION, FRAME_LIMIT, GOAL, EnvSpec, WaypointEnv, local_waypoint, waypoint_reward


def make_track(rng: np.random.Generator, num_waypoints: int, resolution: float, start_box: float = 2.0,
               turn_std: float = 0.08, fine_step: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed random walk resampled every ``resolution`` units of arc length.

    Returns ``(start, waypoints)`` where ``waypoints`` has ``num_waypoints`` rows.
    """
    start = rng.uniform(-start_box, start_box, size=2)
    heading = rng.uniform(-np.pi, np.pi)
    n_fine = int(np.ceil(num_waypoints * resolution / fine_step)) + 2
    turns = rng.normal(0.0, turn_std, size=n_fine)
    # Smooth heading drift: low-pass the turn noise.
    turns = np.convolve(turns, np.ones(5) / 5.0, mode="same")
    headings = heading + np.cumsum(turns)
    steps = fine_step * np.column_stack([np.cos(headings), np.sin(headings)])
    fine = np.vstack([start, start + np.cumsum(steps, axis=0)])
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(fine, axis=0), axis=1))])
    targets = resolution * np.arange(1, num_waypoints + 1)
    wps = np.column_stack([np.interp(targets, arc, fine[:, 0]), np.interp(targets, arc, fine[:, 1])])
    return start, wps


class PointMassEnv(WaypointEnv):
    name = "pointmass"
    policy_hidden = (16,)
    idm_hidden = (20, 20)

    def __init__(self, num_waypoints: int = 6, resolution: float = 1.5, horizon: int = 100,
                 max_frames: int = 300, waypoint_radius: float = 0.5, reach_limit: float = 0.3,
                 arena: float = 10.0, dt: float = 0.1, drag: float = 0.05, max_speed: float = 3.0):
        self.spec = EnvSpec(state_dim=7, action_dim=2, waypoint_dim=2, max_frames=max_frames,
                            horizon=horizon, waypoint_radius=waypoint_radius)
        self.num_waypoints = num_waypoints
        self.resolution = resolution
        self.reach_limit = reach_limit
        self.arena = arena
        self.dt = dt
        self.drag = drag
        self.max_speed = max_speed
        self.idm_input_dim = 4
        self._vel_scale = max_speed
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.track = np.zeros((num_waypoints, 2))
        self._target = np.zeros(2)
        self.index = 0
        self.t = 0

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        start, self.track = make_track(rng, self.num_waypoints, self.resolution)
        self.pos = start.copy()
        self.vel = np.zeros(2)
        self.index = 0
        self.t = 0
        return self._obs()

    def set_state(self, pos, vel) -> np.ndarray:
        self.pos = np.asarray(pos, dtype=np.float64).copy()
        self.vel = np.asarray(vel, dtype=np.float64).copy()
        return self._obs()

    @property
    def next_waypoint(self) -> np.ndarray:
        return self.track[min(self.index, len(self.track) - 1)]

    def local_target(self) -> np.ndarray:
        return self._target

    def _obs(self) -> np.ndarray:
        self._target = local_waypoint(self.pos, self.next_waypoint, self.reach_limit) - self.pos
        return np.concatenate([
            self._target,
            self.next_waypoint - self.pos,
            self.vel,
            [self.index / self.num_waypoints],
        ])

    def _advance(self, pos, vel, action):
        new_pos = pos + vel * self.dt
        new_vel = (vel + action * self.dt) * (1.0 - self.drag)
        speed = math.sqrt(float(new_vel @ new_vel))
        if speed > self.max_speed:
            new_vel = new_vel * (self.max_speed / speed)
        return new_pos, new_vel

    def step(self, action):
        action = self.clip_action(np.asarray(action, dtype=np.float64))
        old_pos = self.pos
        self.pos, self.vel = self._advance(self.pos, self.vel, action)
        reached = self.pos + self.vel * self.dt - old_pos
        self.t += 1
        collided = abs(self.pos[0]) > self.arena or abs(self.pos[1]) > self.arena
        reward, advanced = waypoint_reward(self.pos, self.next_waypoint, self.spec, collided)
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
        info = {"reached": reached, "action": action, "terminated_by": terminated_by, "advanced": advanced}
        return self._obs(), reward, terminated_by is not None, info

    def idm_features(self, states, targets) -> np.ndarray:
        states = np.atleast_2d(states)
        targets = np.atleast_2d(targets)
        vel = states[:, 4:6]
        # Displacement beyond straight-line coasting, in units of acceleration.
        excess = (targets - 2.0 * self.dt * vel) / (self.dt * self.dt)
        return np.hstack([vel / self._vel_scale, excess])

    def oracle_action(self, states, targets) -> np.ndarray:
        """Unclipped-then-clipped inverse of the two-step displacement (ignores the speed clamp)."""
        vel = np.atleast_2d(states)[:, 4:6]
        disp = np.atleast_2d(targets)
        dt, keep = self.dt, 1.0 - self.drag
        action = ((disp - vel * dt) / (keep * dt) - vel) / dt
        return np.clip(action, -1.0, 1.0)

    def raw_oracle_action(self, vel, disp) -> np.ndarray:
        dt, keep = self.dt, 1.0 - self.drag
        return ((np.asarray(disp) - np.asarray(vel) * dt) / (keep * dt) - np.asarray(vel)) / dt

    def sample_oracle_transitions(self, rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Random (state, reached displacement, action) triples generated by the true dynamics."""
        states = np.zeros((count, self.spec.state_dim))
        angle = rng.uniform(-np.pi, np.pi, size=count)
        speed = self.max_speed * 0.9 * np.sqrt(rng.uniform(0.0, 1.0, size=count))
        vel = np.column_stack([np.cos(angle), np.sin(angle)]) * speed[:, None]
        actions = rng.uniform(-1.0, 1.0, size=(count, 2))
        states[:, 4:6] = vel
        disp = np.zeros((count, 2))
        for i in range(count):
            p1, v1 = self._advance(np.zeros(2), vel[i], actions[i])
            disp[i] = p1 + v1 * self.dt
        return states, disp, actions
