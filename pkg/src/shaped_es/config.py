"""Run configuration: a flat ``key = value`` file with typed, validated fields."""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

METHODS = ("shaped", "vanilla", "cma")
TRANSPORTS = ("inprocess", "socket")
SPAWN_MODES = ("thread", "process")
INIT_OUTPUTS = ("random", "zero")

ENV_STORE = "SHAPED_ES_STORE"
ENV_SEED = "SHAPED_ES_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "pointmass"
    method: str = "shaped"
    population: int = 16
    generations: int = 50
    workers: int = 4
    eval_workers: int = 0
    eval_episodes: int = 15
    episodes_per_member: int = 2
    seed: int = 0
    init_output: str = "random"  # "zero" starts from a policy whose output layer is all zeros
    # search distribution
    sigma: float = 0.05
    gamma: float = 0.05
    beta: float = 1.0
    alpha: float = 0.5
    eta: float = 1.0
    # CMA baseline
    elite_fraction: float = 0.25
    weight_decay: float = 0.05
    cma_min_var: float = 0.0
    # behaviour cloning on workers
    bc_steps: int = 20
    bc_lr: float = 0.01
    bc_max_samples: int = 512
    # inverse dynamics model on the master
    idm_lr: float = 1e-3
    idm_batch: int = 64
    idm_epochs: int = 5
    idm_max_steps: int = 300
    filter_threshold: float = 5.0
    policy_hidden: tuple = ()
    idm_hidden: tuple = ()
    # plumbing
    transport: str = "inprocess"
    spawn: str = "thread"
    timeout: float = 300.0
    output: str = "runs/run"
    store: str = ""
    env_kwargs: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        from .envs import ENVS

        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.env in ENVS, f"unknown env {self.env!r}; choose from {sorted(ENVS)}")
        need(self.method in METHODS, f"unknown method {self.method!r}; choose from {METHODS}")
        need(self.transport in TRANSPORTS, f"unknown transport {self.transport!r}; choose from {TRANSPORTS}")
        need(self.spawn in SPAWN_MODES, f"unknown spawn mode {self.spawn!r}; choose from {SPAWN_MODES}")
        need(self.init_output in INIT_OUTPUTS, f"unknown init_output {self.init_output!r}; choose from {INIT_OUTPUTS}")
        need(self.population >= 2 and self.population % 2 == 0, "population must be an even number >= 2")
        need(self.generations >= 1, "generations must be >= 1")
        need(self.workers >= 1, "workers must be >= 1")
        need(self.eval_workers >= 0, "eval_workers must be >= 0")
        need(self.eval_episodes >= 1, "eval_episodes must be >= 1")
        need(self.episodes_per_member >= 1, "episodes_per_member must be >= 1")
        need(self.sigma > 0, "sigma must be positive")
        need(self.gamma > 0, "gamma must be positive")
        need(self.beta > 0, "beta must be positive")
        need(0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]")
        need(self.eta > 0, "eta must be positive")
        need(0.0 < self.elite_fraction <= 1.0, "elite_fraction must lie in (0, 1]")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(self.cma_min_var >= 0, "cma_min_var must be >= 0")
        need(self.bc_steps >= 0, "bc_steps must be >= 0")
        need(self.bc_lr >= 0, "bc_lr must be >= 0")
        need(self.bc_max_samples >= 0, "bc_max_samples must be >= 0")
        need(self.idm_lr > 0, "idm_lr must be positive")
        need(self.idm_batch >= 1, "idm_batch must be >= 1")
        need(self.idm_epochs >= 1, "idm_epochs must be >= 1")
        need(self.idm_max_steps >= 0, "idm_max_steps must be >= 0 (0 means uncapped)")
        need(self.timeout > 0, "timeout must be positive")
        need(self.seed >= 0, "seed must be >= 0")
        need(all(h >= 1 for h in self.policy_hidden + self.idm_hidden), "hidden layer sizes must be >= 1")
        from .envs import make_env

        try:
            make_env(self.env, **self.env_kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad env option: {exc}") from exc
        return self

    def worker_settings(self, store_root: str | None) -> dict:
        return {
            "env": self.env,
            "env_kwargs": dict(self.env_kwargs),
            "policy_hidden": list(self.policy_hidden) or None,
            "idm_hidden": list(self.idm_hidden) or None,
            "bc_steps": self.bc_steps if self.method == "shaped" else 0,
            "bc_lr": self.bc_lr,
            "bc_max_samples": self.bc_max_samples,
            "store_root": store_root,
        }

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "env_kwargs":
                for k in sorted(value):
                    lines.append(f"env.{k} = {_format(value[k])}")
                continue
            lines.append(f"{f.name} = {_format(value)}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_HINTS = typing.get_type_hints(RunConfig)


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _coerce(key: str, text: str):
    hint = _HINTS[key]
    text = text.strip()
    try:
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is tuple:
            return tuple(int(t) for t in text.replace(" ", "").split(",") if t)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {hint.__name__}") from exc


def parse_pairs(pairs, values: dict | None = None, source: str = "<args>") -> dict:
    """Fold ``key = value`` strings into ``values``; unknown keys are rejected."""
    values = {} if values is None else values
    for lineno, raw in enumerate(pairs, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, text = (s.strip() for s in line.split("=", 1))
        if key.startswith("env."):
            values.setdefault("env_kwargs", {})[key[4:]] = _scalar(text.strip())
        elif key in _FIELDS and key != "env_kwargs":
            values[key] = _coerce(key, text)
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    return values


def load_config(path=None, overrides=(), environ=None) -> RunConfig:
    """File values, then ``SHAPED_ES_*`` environment variables, then explicit overrides."""
    environ = os.environ if environ is None else environ
    values: dict = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        parse_pairs(text.splitlines(), values, source=str(p))
    if environ.get(ENV_STORE):
        values["store"] = environ[ENV_STORE]
    if environ.get(ENV_SEED):
        values["seed"] = _coerce("seed", environ[ENV_SEED])
    parse_pairs(list(overrides), values)
    env_kwargs = values.pop("env_kwargs", {})
    cfg = RunConfig(**values)
    cfg.env_kwargs.update(env_kwargs)
    return cfg.validate()
