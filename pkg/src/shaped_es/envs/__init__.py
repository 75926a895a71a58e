from .arm import ArmEnv
from .base import (
    COLLISION,
    FRAME_LIMIT,
    GOAL,
    EnvSpec,
    Trajectory,
    WaypointEnv,
    bezier_point,
    local_waypoint,
    run_episode,
    waypoint_reward,
)
from .pointmass import PointMassEnv

ENVS = {PointMassEnv.name: PointMassEnv, ArmEnv.name: ArmEnv}


def make_env(name: str, **kwargs) -> WaypointEnv:
    try:
        cls = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(ENVS)}") from None
    return cls(**kwargs)


__all__ = [
    "ArmEnv", "PointMassEnv", "ENVS", "make_env", "EnvSpec", "Trajectory", "WaypointEnv",
    "bezier_point", "local_waypoint", "run_episode", "waypoint_reward", "GOAL", "COLLISION", "FRAME_LIMIT",
]
