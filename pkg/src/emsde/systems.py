"""Ground-truth reference systems: geometric Brownian motion and a
stochastic Lorenz-63 variant with multiplicative noise on the second and
third components.

Each system is usable directly as a simulation source (it has ``dim``,
``drift`` and ``noise_scales``) and can be embedded exactly into the
bilinear/linear parametric class via ``as_sde_model``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emsde.model import DiffusionParams, DriftParams, SdeModel, as_state

__all__ = [
    "GbmSystem",
    "StochasticLorenzSystem",
    "MomentCurve",
    "empirical_moments",
]


@dataclass(frozen=True)
class MomentCurve:
    """Per-time mean and variance of each state component."""

    times: np.ndarray  # (n,)
    mean: np.ndarray  # (n, d)
    variance: np.ndarray  # (n, d)
    kind: str = "theoretical"  # "theoretical" | "empirical"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        mean = np.atleast_2d(np.asarray(self.mean, dtype=np.float64).T).T
        variance = np.atleast_2d(np.asarray(self.variance, dtype=np.float64).T).T
        if not (times.shape[0] == mean.shape[0] == variance.shape[0]):
            raise ValueError("times, mean and variance must have equal lengths")
        if np.any(variance < 0):
            raise ValueError("variance must be nonnegative")
        if self.kind not in ("theoretical", "empirical"):
            raise ValueError(f"unknown curve kind {self.kind!r}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)


@dataclass(frozen=True)
class GbmSystem:
    """Geometric Brownian motion dx = mu*x dt + sigma*x dbeta."""

    mu: float
    sigma: float
    x0: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.x0 <= 0:
            raise ValueError(f"x0 must be positive, got {self.x0}")

    @property
    def dim(self) -> int:
        return 1

    def drift(self, x) -> np.ndarray:
        return self.mu * as_state(x, 1)

    def noise_scales(self, x) -> np.ndarray:
        return self.sigma * as_state(x, 1)

    def theoretical_moments(self, times) -> MomentCurve:
        """Closed-form mean x0*exp(mu t) and variance x0^2 exp(2 mu t)(exp(sigma^2 t) - 1)."""
        t = np.asarray(times, dtype=np.float64)
        if np.any(t < 0):
            raise ValueError("times must be nonnegative")
        mean = self.x0 * np.exp(self.mu * t)
        variance = self.x0**2 * np.exp(2.0 * self.mu * t) * np.expm1(self.sigma**2 * t)
        return MomentCurve(times=t, mean=mean[:, None], variance=variance[:, None],
                           kind="theoretical")

    def as_sde_model(self, variance_floor: float = 1e-6) -> SdeModel:
        return SdeModel(
            drift_params=DriftParams(a1=[[self.mu]], a2=[[0.0]], a3=[[0.0]]),
            diffusion_params=DiffusionParams(b=[[self.sigma]], variance_floor=variance_floor),
        )


@dataclass(frozen=True)
class StochasticLorenzSystem:
    """Lorenz-63 with state-dependent noise on the second and third equations.

    Drift:  ( sigma*y - (sigma + 2/gamma)*x,
              (rho - z)*x - (1 + 2/gamma)*y,
              x*y - (beta + 4/gamma)*z )
    Noise scales: ( 0, (rho - z)/sqrt(gamma), y/sqrt(gamma) ).

    gamma sets the noise level (larger gamma, weaker noise); in the
    gamma -> inf limit the drift reduces to the classic chaotic Lorenz-63
    field. ``shared_noise`` makes both noisy components ride one Brownian
    path instead of independent ones; it only affects data generation.
    """

    gamma: float
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    shared_noise: bool = False

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def dim(self) -> int:
        return 3

    def drift(self, state) -> np.ndarray:
        x, y, z = as_state(state, 3)
        g = self.gamma
        return np.array(
            [
                self.sigma * y - (self.sigma + 2.0 / g) * x,
                (self.rho - z) * x - (1.0 + 2.0 / g) * y,
                x * y - (self.beta + 4.0 / g) * z,
            ]
        )

    def noise_scales(self, state) -> np.ndarray:
        x, y, z = as_state(state, 3)
        root_g = np.sqrt(self.gamma)
        return np.array([0.0, (self.rho - z) / root_g, y / root_g])

    def as_sde_model(self, affine: bool = False, variance_floor: float = 1e-6) -> SdeModel:
        """Exact embedding into the parametric class.

        The second-row noise scale (rho - z)/sqrt(gamma) needs a constant
        term: with ``affine=True`` the returned model reproduces the system
        exactly; with ``affine=False`` (the 9-parameter diffusion) the
        constant rho/sqrt(gamma) is dropped and the model is only the best
        in-class stand-in (meta flags the approximation).
        """
        g = self.gamma
        root_g = np.sqrt(g)
        a1 = [
            [-(self.sigma + 2.0 / g), self.sigma, 0.0],
            [self.rho, -(1.0 + 2.0 / g), 0.0],
            [0.0, 0.0, -(self.beta + 4.0 / g)],
        ]
        # row 2 quadratic -x*z, row 3 quadratic +x*y
        a2 = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
        a3 = [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]
        b = [
            [0.0, 0.0, 0.0],
            [0.0, 0.0, -1.0 / root_g],
            [0.0, 1.0 / root_g, 0.0],
        ]
        bias = [0.0, self.rho / root_g, 0.0] if affine else None
        meta = None if affine else {"diffusion": "approximation"}
        return SdeModel(
            drift_params=DriftParams(a1=a1, a2=a2, a3=a3),
            diffusion_params=DiffusionParams(b=b, bias=bias, variance_floor=variance_floor),
            meta=meta,
        )


def empirical_moments(trajectories) -> MomentCurve:
    """Ensemble mean and unbiased variance at each time on a shared grid."""
    if len(trajectories) < 2:
        raise ValueError("need at least 2 trajectories for empirical moments")
    ref = trajectories[0]
    for traj in trajectories[1:]:
        if traj.states.shape != ref.states.shape or traj.tau != ref.tau:
            raise ValueError("trajectories must share one time grid")
    stack = np.stack([t.states for t in trajectories])  # (n_traj, n_times, d)
    return MomentCurve(
        times=ref.times,
        mean=stack.mean(axis=0),
        variance=stack.var(axis=0, ddof=1),
        kind="empirical",
    )
