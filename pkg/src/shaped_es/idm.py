"""Inverse dynamics model: which action moves the agent by a given displacement.

The model is trained on hindsight pairs from rollouts: the physical part of
the state plus the displacement the executed action actually produced, with the
executed action as the label. At labelling time it is queried with the local
waypoint the environment offered instead, which turns it into a controller
that heads for the waypoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .envs.base import Trajectory, WaypointEnv
from .params import Adam, MlpNet, NetShape, flatten, forward, init_net, mse_loss_and_grad, unflatten

log = logging.getLogger(__name__)

DEFAULT_LR = 1e-3
DEFAULT_BATCH = 64
DEFAULT_FILTER = 5.0


def idm_shape(env: WaypointEnv, hidden=None) -> NetShape:
    return NetShape.mlp(env.idm_input_dim, env.idm_hidden if hidden is None else hidden, env.spec.action_dim)


def new_idm(env: WaypointEnv, rng: np.random.Generator, hidden=None) -> MlpNet:
    return init_net(idm_shape(env, hidden), rng)


def idm_predict(model: MlpNet, env: WaypointEnv, states, targets, clip: bool = False) -> np.ndarray:
    """Action estimates for rows of (state, relative target)."""
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    single = states.ndim == 1
    feats = env.idm_features(np.atleast_2d(states), np.atleast_2d(targets))
    if feats.shape[1] != model.input_dim:
        raise ValueError(f"IDM input has {feats.shape[1]} features, model expects {model.input_dim}")
    out = forward(model, feats)
    if clip:
        out = env.clip_action(out)
    return out[0] if single else out


def filter_trajectories(trajs, threshold: float = DEFAULT_FILTER) -> list:
    """Keep trajectories whose cumulative reward is at least ``threshold``."""
    return [t for t in trajs if t.cumulative_reward >= threshold]


@dataclass
class IdmDataset:
    """Append-only pool of hindsight transitions, tagged by generation."""

    state_dim: int
    target_dim: int
    action_dim: int
    _states: list = field(default_factory=list)
    _targets: list = field(default_factory=list)
    _actions: list = field(default_factory=list)
    _gens: list = field(default_factory=list)
    _cache: tuple | None = None

    @classmethod
    def for_env(cls, env: WaypointEnv) -> "IdmDataset":
        return cls(env.spec.state_dim, env.spec.waypoint_dim, env.spec.action_dim)

    def add(self, states, targets, actions, generation: int) -> None:
        states = np.asarray(states, dtype=np.float64).reshape(-1, self.state_dim)
        targets = np.asarray(targets, dtype=np.float64).reshape(-1, self.target_dim)
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, self.action_dim)
        if not (len(states) == len(targets) == len(actions)):
            raise ValueError("states, targets and actions must have the same number of rows")
        if len(states) == 0:
            return
        self._states.append(states)
        self._targets.append(targets)
        self._actions.append(actions)
        self._gens.append(np.full(len(states), generation, dtype=np.int64))
        self._cache = None

    def add_trajectory(self, traj: Trajectory, generation: int) -> None:
        self.add(traj.states, traj.reached, traj.actions, generation)

    def __len__(self) -> int:
        return sum(len(a) for a in self._actions)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if self._cache is None:
            if not self._states:
                self._cache = (
                    np.zeros((0, self.state_dim)), np.zeros((0, self.target_dim)),
                    np.zeros((0, self.action_dim)), np.zeros(0, dtype=np.int64),
                )
            else:
                self._cache = tuple(np.concatenate(x) for x in (self._states, self._targets, self._actions, self._gens))
        return self._cache


def idm_train(model: MlpNet, env: WaypointEnv, dataset: IdmDataset, rng: np.random.Generator, lr: float = DEFAULT_LR,
              batch_size: int = DEFAULT_BATCH, epochs: int = 5, max_steps: int | None = None,
              optimizer: Adam | None = None) -> tuple[MlpNet, float]:
    """Minibatch Adam on the mean squared action error.

    Returns the new model and the mean loss over the final epoch (NaN for an
    empty dataset, which leaves the model unchanged). ``max_steps`` caps the
    total number of minibatch updates regardless of ``epochs``.
    """
    states, targets, actions, _ = dataset.arrays()
    if len(states) == 0:
        log.warning("IDM dataset is empty; skipping training")
        return model, float("nan")
    feats = env.idm_features(states, targets)
    params = flatten(model)
    opt = optimizer if optimizer is not None else Adam(params.size, lr=lr)
    steps = 0
    epoch_loss = float("nan")
    for _ in range(epochs):
        order = rng.permutation(len(feats))
        losses, weights = [], []
        for start in range(0, len(order), batch_size):
            if max_steps is not None and steps >= max_steps:
                break
            idx = order[start : start + batch_size]
            net = unflatten(model.shape, params)
            loss, grad = mse_loss_and_grad(net, feats[idx], actions[idx])
            params = opt.step(params, grad)
            losses.append(loss)
            weights.append(len(idx))
            steps += 1
        if losses:
            epoch_loss = float(np.average(losses, weights=weights))
        if max_steps is not None and steps >= max_steps:
            break
    return unflatten(model.shape, params), epoch_loss


def idm_action_error(model: MlpNet, env: WaypointEnv, states, targets, true_actions) -> float:
    """Mean Euclidean distance between predicted and true actions."""
    if len(states) == 0:
        return float("nan")
    pred = idm_predict(model, env, states, targets)
    return float(np.mean(np.linalg.norm(pred - np.asarray(true_actions), axis=1)))


class IdmTrainer:
    """Keeps the model, its optimiser state and the pooled train/test split across generations."""

    def __init__(self, env: WaypointEnv, seed: int, lr: float = DEFAULT_LR, batch_size: int = DEFAULT_BATCH,
                 epochs: int = 5, max_steps: int | None = 300, reward_threshold: float = DEFAULT_FILTER,
                 holdout_every: int = 10, hidden=None):
        self.env = env
        self.rng = np.random.default_rng(seed)
        self.model = new_idm(env, self.rng, hidden)
        self.optimizer = Adam(self.model.shape.num_params, lr=lr)
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.reward_threshold = reward_threshold
        self.holdout_every = holdout_every
        self.train_set = IdmDataset.for_env(env)
        self.test_set = IdmDataset.for_env(env)
        self.trained = False
        self._seen = 0

    def add(self, trajs, generation: int) -> None:
        """Pool filtered trajectories; every ``holdout_every``-th one is held out for testing."""
        for traj in filter_trajectories(trajs, self.reward_threshold):
            if self._seen % self.holdout_every == self.holdout_every - 1:
                self.test_set.add_trajectory(traj, generation)
            else:
                self.train_set.add_trajectory(traj, generation)
            self._seen += 1

    def train(self) -> float:
        if len(self.train_set) == 0:
            return float("nan")
        self.model, loss = idm_train(self.model, self.env, self.train_set, self.rng, batch_size=self.batch_size,
                                     epochs=self.epochs, max_steps=self.max_steps, optimizer=self.optimizer)
        self.trained = True
        return loss

    def test_loss(self) -> float:
        states, targets, actions, _ = self.test_set.arrays()
        return idm_action_error(self.model, self.env, states, targets, actions)
