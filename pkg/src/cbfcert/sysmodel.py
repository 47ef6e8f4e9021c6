"""Multi-agent system model: state containers, control-affine dynamics,
bounded-noise sampling, and fixed-step Euler integration.

All value types are immutable after construction and every sampling routine
takes an explicit ``numpy.random.Generator``, so identical (config, seed)
pairs reproduce trajectories bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SetupError

SINGLE_INTEGRATOR = "single_integrator"
DOUBLE_INTEGRATOR = "double_integrator"
NOISE_BALL = "ball"
NOISE_SPHERE = "sphere"

# Rejection-sampling budget for initial configurations.
_MAX_REJECTION_ROUNDS = 10_000


@dataclass(frozen=True)
class SystemConfig:
    """Static description of the closed-loop plant.

    ``domain_half_width`` is the side length of the square spawn region
    ``[0, domain_half_width]^2`` for agent positions.
    """

    n_agents: int = 2
    state_dim: int = 2
    control_dim: int = 2
    noise_bound: float = 0.03
    dt: float = 0.1
    horizon_steps: int = 50
    domain_half_width: float = 10.0
    min_initial_separation: float = 1.0
    dynamics: str = SINGLE_INTEGRATOR
    noise_dist: str = NOISE_BALL

    def __post_init__(self) -> None:
        if self.n_agents < 2:
            raise ConfigError("n_agents must be >= 2")
        if self.dt <= 0:
            raise ConfigError("dt must be > 0")
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps must be >= 1")
        if self.noise_bound < 0:
            raise ConfigError("noise_bound must be >= 0")
        if self.domain_half_width <= 0:
            raise ConfigError("domain_half_width must be > 0")
        if self.min_initial_separation <= 0:
            raise ConfigError("min_initial_separation must be > 0")
        if self.state_dim < 2:
            raise ConfigError("state_dim must be >= 2 (planar spawn region)")
        if self.dynamics == SINGLE_INTEGRATOR:
            if self.state_dim != self.control_dim:
                raise ConfigError("single integrator requires state_dim == control_dim")
        elif self.dynamics == DOUBLE_INTEGRATOR:
            if self.state_dim != 2 * self.control_dim:
                raise ConfigError(
                    "double integrator requires state_dim == 2 * control_dim "
                    "(positions stacked over velocities)"
                )
        else:
            raise ConfigError(f"unknown dynamics model {self.dynamics!r}")
        if self.noise_dist not in (NOISE_BALL, NOISE_SPHERE):
            raise ConfigError(f"unknown noise distribution {self.noise_dist!r}")


def _frozen_array(values, shape, what: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise ConfigError(f"{what} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SystemState:
    """Joint state of all agents: row i is agent i's state vector."""

    x: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.x, dtype=float)
        if arr.ndim != 2:
            raise ConfigError("state must be an N x n matrix")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("state contains non-finite entries")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "x", arr)

    @property
    def n_agents(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class ControlVector:
    """Joint control input: row i is agent i's input."""

    u: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.u, dtype=float)
        if arr.ndim != 2:
            raise ConfigError("control must be an N x m matrix")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("control contains non-finite entries")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "u", arr)


@dataclass(frozen=True)
class DisturbanceSample:
    """One disturbance vector per agent; per-agent norm bounded by construction."""

    w: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.w, dtype=float)
        if arr.ndim != 2:
            raise ConfigError("disturbance must be an N x n matrix")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("disturbance contains non-finite entries")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "w", arr)


class SingleIntegrator:
    """x_dot = u + w: zero drift, identity actuation."""

    identity_actuation = True

    def __init__(self, dim: int):
        self.state_dim = dim
        self.control_dim = dim
        self._g = np.eye(dim)

    def drift(self, x_i: np.ndarray) -> np.ndarray:
        return np.zeros(self.state_dim)

    def drift_all(self, x: np.ndarray) -> np.ndarray:
        return np.zeros_like(x)

    def actuation(self, x_i: np.ndarray) -> np.ndarray:
        return self._g


class DoubleIntegrator:
    """Planar kinematic chain: state (p, v), p_dot = v, v_dot = u + w_v."""

    identity_actuation = False

    def __init__(self, planar_dim: int = 2):
        self.control_dim = planar_dim
        self.state_dim = 2 * planar_dim
        g = np.zeros((self.state_dim, planar_dim))
        g[planar_dim:, :] = np.eye(planar_dim)
        self._g = g

    def drift(self, x_i: np.ndarray) -> np.ndarray:
        out = np.zeros(self.state_dim)
        out[: self.control_dim] = x_i[self.control_dim :]
        return out

    def drift_all(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        out[:, : self.control_dim] = x[:, self.control_dim :]
        return out

    def actuation(self, x_i: np.ndarray) -> np.ndarray:
        return self._g


def dynamics_model(config: SystemConfig):
    if config.dynamics == SINGLE_INTEGRATOR:
        return SingleIntegrator(config.state_dim)
    return DoubleIntegrator(config.control_dim)


def drift(state: SystemState, agent: int, config: SystemConfig) -> np.ndarray:
    """Drift term f(x_i) of the configured dynamics."""
    return dynamics_model(config).drift(state.x[agent])


def actuation(state: SystemState, agent: int, config: SystemConfig) -> np.ndarray:
    """Actuation matrix g(x_i) of the configured dynamics."""
    return dynamics_model(config).actuation(state.x[agent])


def step(
    state: SystemState,
    u: ControlVector,
    w: DisturbanceSample,
    dt: float,
    config: SystemConfig,
) -> SystemState:
    """One explicit Euler step: x_i' = x_i + dt * (f(x_i) + g(x_i) u_i + w_i)."""
    model = dynamics_model(config)
    n, m = model.state_dim, model.control_dim
    if state.x.shape != (config.n_agents, n):
        raise ConfigError(f"state shape {state.x.shape} does not match config ({config.n_agents}, {n})")
    if u.u.shape != (config.n_agents, m):
        raise ConfigError(f"control shape {u.u.shape} does not match config ({config.n_agents}, {m})")
    if w.w.shape != (config.n_agents, n):
        raise ConfigError(f"disturbance shape {w.w.shape} does not match config ({config.n_agents}, {n})")
    if model.identity_actuation:
        actuated = u.u
    else:
        actuated = u.u @ model.actuation(None).T
    x_next = state.x + dt * (model.drift_all(state.x) + actuated + w.w)
    return SystemState(x=x_next, t=state.t + dt)


def noise_array(config: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Raw N x n bounded-noise draw; see :func:`sample_noise` for semantics.

    The generator consumption pattern is independent of ``noise_bound``, so
    runs that differ only in the bound see the same underlying draws scaled
    linearly (common random numbers across noise levels).
    """
    n_agents, n = config.n_agents, config.state_dim
    z = rng.standard_normal((n_agents, n))
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    degenerate = norms == 0.0
    if np.any(degenerate):  # probability-zero draw; pick an arbitrary direction
        z[degenerate, 0] = 1.0
        norms[degenerate] = 1.0
    if config.noise_dist == NOISE_BALL:
        radii = config.noise_bound * rng.random(n_agents) ** (1.0 / n)
    else:
        radii = np.full(n_agents, config.noise_bound)
    return z * (radii / norms)[:, None]


def sample_noise(config: SystemConfig, rng: np.random.Generator) -> DisturbanceSample:
    """Draw one bounded disturbance per agent.

    ``ball`` mode is uniform on the closed Euclidean ball of radius
    ``noise_bound`` (uniform direction, radius = bound * U^(1/n)); ``sphere``
    mode pins the norm at the bound. Either way the per-agent norm never
    exceeds the bound.
    """
    return DisturbanceSample(w=noise_array(config, rng))


def sample_initial_state(config: SystemConfig, rng: np.random.Generator) -> SystemState:
    """Rejection-sample a spawn configuration.

    Positions are i.i.d. uniform on the square; the whole configuration is
    redrawn until every pairwise distance reaches ``min_initial_separation``,
    which keeps the accepted distribution exchangeable across agents.
    Higher state coordinates (velocities) start at zero.
    """
    n_agents = config.n_agents
    side = config.domain_half_width
    sep = config.min_initial_separation
    # Loose-packing precondition: the N exclusion disks must occupy well under
    # the square's area, otherwise rejection sampling cannot be expected to
    # stop (disk density 0.45 still accepts within a few thousand rounds for
    # small N; dense packings are rejected up front).
    disk_area = n_agents * math.pi * (sep / 2.0) ** 2
    if disk_area > 0.45 * side * side:
        raise SetupError(
            f"spawn domain too crowded: {n_agents} agents at separation {sep} "
            f"in a {side} x {side} square"
        )
    for _ in range(_MAX_REJECTION_ROUNDS):
        pos = rng.uniform(0.0, side, size=(n_agents, 2))
        ok = True
        for i in range(n_agents - 1):
            diff = pos[i + 1 :] - pos[i]
            if np.min(np.einsum("ij,ij->i", diff, diff)) < sep * sep:
                ok = False
                break
        if ok:
            x = np.zeros((n_agents, config.state_dim))
            x[:, :2] = pos
            return SystemState(x=x, t=0.0)
    raise SetupError(
        f"initial-state sampling did not terminate in {_MAX_REJECTION_ROUNDS} rounds"
    )
