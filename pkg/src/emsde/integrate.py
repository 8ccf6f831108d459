"""Euler-Maruyama simulation with a reproducible randomness contract.

Randomness contract
-------------------
* Generator: numpy ``Generator`` over the PCG64 bit generator, seeded through
  ``numpy.random.SeedSequence``.
* Per-trajectory streams: ``SeedSequence(seed).spawn(n)`` — member k of an
  ensemble uses child sequence k, so ensembles are reproducible and members
  are independent without shared state (see ``derive_streams``).
* Gaussian increments: ``Generator.normal(0, sqrt(tau))`` (numpy's ziggurat
  sampler). If numpy ever changes the sampler, regenerate any golden
  trajectories pinned by tests.

Within one build (fixed backend, fixed numpy), equal inputs produce bitwise
equal trajectories.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from emsde import backends
from emsde.errors import DimensionMismatchError, DivergenceError
from emsde.model import SdeModel, as_state

__all__ = [
    "Trajectory",
    "SimConfig",
    "em_step",
    "em_path",
    "simulate",
    "simulate_ensemble",
    "derive_streams",
    "write_trajectory_csv",
    "read_trajectory_csv",
]


@dataclass(frozen=True)
class Trajectory:
    """A uniformly sampled path: states[k] is the state at start_time + k*tau."""

    tau: float
    states: np.ndarray  # (n_states, d)
    start_time: float = 0.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] < 2:
            raise DimensionMismatchError(
                f"states must be a (n>=2, d) array, got shape {states.shape}"
            )
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory contains non-finite states")
        states = np.ascontiguousarray(states)
        states.flags.writeable = False
        object.__setattr__(self, "states", states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.tau * np.arange(self.states.shape[0])


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings: record `steps` states after `burn_in` discarded steps."""

    steps: int
    tau: float
    seed: int
    initial_state: np.ndarray
    burn_in: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        state = as_state(self.initial_state)
        state.flags.writeable = False
        object.__setattr__(self, "initial_state", state)


def derive_streams(seed: int, n: int) -> list[np.random.SeedSequence]:
    """The documented per-trajectory stream derivation: SeedSequence(seed).spawn(n)."""
    return np.random.SeedSequence(seed).spawn(n)


def em_step(drift, noise_scale, x, tau: float, dbeta) -> np.ndarray:
    """One Euler-Maruyama step: x + tau * drift + noise_scale * dbeta.

    The caller supplies the increment dbeta (each component N(0, tau) when
    drawn by the simulator). Deterministic given its inputs.
    """
    x = np.asarray(x, dtype=np.float64)
    out = x + tau * np.asarray(drift, dtype=np.float64) \
        + np.asarray(noise_scale, dtype=np.float64) * np.asarray(dbeta, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("Euler-Maruyama step produced a non-finite state")
    return out


def _model_arrays(model: SdeModel):
    d = model.dim
    p = model.drift_params
    q = model.diffusion_params
    bias = np.zeros(d) if q.bias is None else np.ascontiguousarray(q.bias)
    return (
        np.ascontiguousarray(p.a1),
        np.ascontiguousarray(p.a2),
        np.ascontiguousarray(p.a3),
        np.ascontiguousarray(q.b),
        bias,
    )


def em_path(model: SdeModel, x0, tau: float, increments) -> np.ndarray:
    """Integrate one path of `model` from x0 using caller-supplied increments.

    increments has shape (steps, d); returns states of shape (steps + 1, d).
    Raises DivergenceError naming the first non-finite step.
    """
    x0 = as_state(x0, model.dim)
    increments = np.ascontiguousarray(increments, dtype=np.float64)
    if increments.ndim != 2 or increments.shape[1] != model.dim:
        raise DimensionMismatchError(
            f"increments must have shape (steps, {model.dim}), got {increments.shape}"
        )
    a1, a2, a3, b, bias = _model_arrays(model)
    kernel = backends.active_backend()
    states, status = kernel.em_paths(a1, a2, a3, b, bias, x0[None, :], tau, increments[None])
    if status[0] != -1:
        raise DivergenceError(
            f"non-finite state at step {status[0]}", step=int(status[0])
        )
    return states[0]


def _increments(stream: np.random.SeedSequence, steps: int, width: int, tau: float):
    rng = np.random.Generator(np.random.PCG64(stream))
    return rng.normal(0.0, math.sqrt(tau), size=(steps, width))


def _simulate_model(model: SdeModel, cfg: SimConfig, stream) -> Trajectory:
    total = cfg.burn_in + cfg.steps
    dbeta = _increments(stream, total, model.dim, cfg.tau)
    a1, a2, a3, b, bias = _model_arrays(model)
    kernel = backends.active_backend()
    states, status = kernel.em_paths(
        a1, a2, a3, b, bias, cfg.initial_state[None, :], cfg.tau, dbeta[None]
    )
    if status[0] != -1:
        raise DivergenceError(
            f"non-finite state at step {status[0]}", step=int(status[0])
        )
    return Trajectory(tau=cfg.tau, states=states[0, cfg.burn_in :, :].copy())


def _simulate_generic(system, cfg: SimConfig, stream) -> Trajectory:
    d = system.dim
    if cfg.initial_state.shape[0] != d:
        raise DimensionMismatchError(
            f"initial state has dimension {cfg.initial_state.shape[0]}, system needs {d}"
        )
    shared = bool(getattr(system, "shared_noise", False))
    total = cfg.burn_in + cfg.steps
    dbeta = _increments(stream, total, 1 if shared else d, cfg.tau)
    states = np.empty((total + 1, d))
    states[0] = cfg.initial_state
    x = cfg.initial_state
    with np.errstate(all="ignore"):
        for t in range(total):
            db = dbeta[t, 0] if shared else dbeta[t]
            x = x + cfg.tau * system.drift(x) + system.noise_scales(x) * db
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"non-finite state at step {t + 1}", step=t + 1)
            states[t + 1] = x
    return Trajectory(tau=cfg.tau, states=states[cfg.burn_in :, :].copy())


def simulate(source, cfg: SimConfig, *, stream=None) -> Trajectory:
    """Simulate one trajectory of an SdeModel or of any object with
    ``dim``, ``drift(x)`` and ``noise_scales(x)``.

    The result has ``cfg.steps + 1`` states (burn-in steps are discarded) and
    is bitwise reproducible for equal inputs within one build. ``stream``
    overrides the seed-derived SeedSequence and is how ensemble members are
    addressed individually.
    """
    if stream is None:
        stream = np.random.SeedSequence(cfg.seed)
    if isinstance(source, SdeModel):
        if source.dim != cfg.initial_state.shape[0]:
            raise DimensionMismatchError(
                f"initial state has dimension {cfg.initial_state.shape[0]}, "
                f"model needs {source.dim}"
            )
        return _simulate_model(source, cfg, stream)
    return _simulate_generic(source, cfg, stream)


def simulate_ensemble(source, cfg: SimConfig, n_traj: int, *, on_divergence="raise"):
    """Simulate n_traj independent trajectories.

    Member k uses the stream ``derive_streams(cfg.seed, n_traj)[k]``, so the
    members are exchangeable, mutually independent and individually
    reproducible. Divergent members raise by default; with
    ``on_divergence="skip"`` they are dropped with a warning and the
    survivors are returned (in member order).
    """
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    if on_divergence not in ("raise", "skip"):
        raise ValueError(f"unknown on_divergence policy {on_divergence!r}")
    streams = derive_streams(cfg.seed, n_traj)

    if isinstance(source, SdeModel):
        if source.dim != cfg.initial_state.shape[0]:
            raise DimensionMismatchError(
                f"initial state has dimension {cfg.initial_state.shape[0]}, "
                f"model needs {source.dim}"
            )
        total = cfg.burn_in + cfg.steps
        d = source.dim
        dbeta = np.empty((n_traj, total, d))
        for k, s in enumerate(streams):
            dbeta[k] = _increments(s, total, d, cfg.tau)
        a1, a2, a3, b, bias = _model_arrays(source)
        kernel = backends.active_backend()
        x0 = np.broadcast_to(cfg.initial_state, (n_traj, d))
        states, status = kernel.em_paths(a1, a2, a3, b, bias,
                                         np.ascontiguousarray(x0), cfg.tau, dbeta)
        failures = [(int(k), int(s)) for k, s in enumerate(status) if s != -1]
        trajectories = [
            Trajectory(tau=cfg.tau, states=states[k, cfg.burn_in :, :].copy())
            for k in range(n_traj)
            if status[k] == -1
        ]
    else:
        failures = []
        trajectories = []
        for k, s in enumerate(streams):
            try:
                trajectories.append(simulate(source, cfg, stream=s))
            except DivergenceError as err:
                failures.append((k, err.step))

    if failures:
        if on_divergence == "raise":
            k, step = failures[0]
            err = DivergenceError(
                f"{len(failures)} of {n_traj} trajectories diverged "
                f"(first: member {k} at step {step})",
                step=step,
                trajectory_index=k,
            )
            err.failures = failures
            raise err
        warnings.warn(
            f"dropped {len(failures)} of {n_traj} diverged trajectories",
            RuntimeWarning,
            stacklevel=2,
        )
    return trajectories


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Write `t,x0,...,x{d-1}` rows at full double precision (17 significant digits)."""
    times = traj.times
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t," + ",".join(f"x{i}" for i in range(traj.dim)) + "\n")
        for t, row in zip(times, traj.states):
            fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ValueError(f"{path}: expected header starting with 't'")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: row width does not match header")
    times = data[:, 0]
    if data.shape[0] < 2:
        raise ValueError(f"{path}: need at least two rows")
    steps = np.diff(times)
    tau = steps[0]
    if tau <= 0 or not np.allclose(steps, tau, rtol=1e-9, atol=0):
        raise ValueError(f"{path}: time grid is not uniformly spaced")
    return Trajectory(tau=float(tau), states=data[:, 1:], start_time=float(times[0]))
