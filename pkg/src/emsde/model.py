"""Parametric SDE model: bilinear drift and linear (optionally affine) diffusion.

The model represents

    dx = ( A1 x + (A2 x) * (A3 x) ) dt + ( B x [+ bias] ) dbeta_t

where ``*`` is the element-wise product and each state component carries its
own independent Brownian increment. One Euler-Maruyama step of size tau then
has the Gaussian transition

    x' | x ~ N( x + tau * F(x),  tau * diag( L(x)^2 + eps ) )

with F the drift, L the per-component noise scale and eps a small variance
floor that keeps the log-likelihood finite where L(x) vanishes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from emsde.errors import DimensionMismatchError

__all__ = [
    "DriftParams",
    "DiffusionParams",
    "SdeModel",
    "GaussianTransition",
    "EffectiveCoefficients",
    "as_state",
    "pair_indices",
    "save_model",
    "load_model",
]


def as_state(x, dim: int | None = None) -> np.ndarray:
    """Validate and return a state vector as a float64 1-D array.

    Raises DimensionMismatchError on wrong shape/dimension and ValueError on
    non-finite components.
    """
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"state must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatchError(f"state has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state contains non-finite components")
    return arr


def _square_matrix(m, name: str) -> np.ndarray:
    arr = np.array(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatchError(f"{name} must be a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DriftParams:
    """Drift parameters: F(x) = a1 @ x + (a2 @ x) * (a3 @ x)."""

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a1", _square_matrix(self.a1, "a1"))
        object.__setattr__(self, "a2", _square_matrix(self.a2, "a2"))
        object.__setattr__(self, "a3", _square_matrix(self.a3, "a3"))
        d = self.a1.shape[0]
        if self.a2.shape != (d, d) or self.a3.shape != (d, d):
            raise DimensionMismatchError("a1, a2, a3 must share one square shape")

    @property
    def dim(self) -> int:
        return self.a1.shape[0]

    @property
    def n_params(self) -> int:
        return 3 * self.dim**2


@dataclass(frozen=True)
class DiffusionParams:
    """Diffusion parameters: L(x) = b @ x (+ bias), floored variance b**2 + variance_floor."""

    b: np.ndarray
    bias: np.ndarray | None = None
    variance_floor: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "b", _square_matrix(self.b, "b"))
        if self.bias is not None:
            bias = np.array(self.bias, dtype=np.float64)
            if bias.shape != (self.b.shape[0],):
                raise DimensionMismatchError(
                    f"bias must have shape ({self.b.shape[0]},), got {bias.shape}"
                )
            if not np.all(np.isfinite(bias)):
                raise ValueError("bias contains non-finite entries")
            bias.flags.writeable = False
            object.__setattr__(self, "bias", bias)
        floor = float(self.variance_floor)
        if not np.isfinite(floor) or floor < 0:
            raise ValueError(f"variance_floor must be >= 0, got {floor}")
        object.__setattr__(self, "variance_floor", floor)

    @property
    def dim(self) -> int:
        return self.b.shape[0]


@dataclass(frozen=True)
class GaussianTransition:
    """Mean and diagonal covariance of x' given x for one step of size tau."""

    mean: np.ndarray
    variance: np.ndarray  # diagonal entries of the covariance


@dataclass(frozen=True)
class SdeModel:
    """Immutable parameter set for the bilinear-drift / linear-diffusion SDE.

    All evaluation methods are pure functions of (parameters, input); the
    instance is safe for unrestricted concurrent use.
    """

    drift_params: DriftParams
    diffusion_params: DiffusionParams
    meta: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.drift_params.dim != self.diffusion_params.dim:
            raise DimensionMismatchError(
                f"drift dimension {self.drift_params.dim} != "
                f"diffusion dimension {self.diffusion_params.dim}"
            )

    @property
    def dim(self) -> int:
        return self.drift_params.dim

    @property
    def noise_dim(self) -> int:
        # one independent Brownian component per state dimension
        return self.dim

    def drift(self, x) -> np.ndarray:
        """Evaluate F(x) = a1 x + (a2 x) * (a3 x)."""
        x = as_state(x, self.dim)
        p = self.drift_params
        return p.a1 @ x + (p.a2 @ x) * (p.a3 @ x)

    def noise_scales(self, x) -> np.ndarray:
        """Evaluate L(x) = b x (+ bias); component i scales the i-th Brownian increment."""
        x = as_state(x, self.dim)
        p = self.diffusion_params
        scales = p.b @ x
        if p.bias is not None:
            scales = scales + p.bias
        return scales

    def transition(self, x, tau: float) -> GaussianTransition:
        """One-step Gaussian transition: mean x + tau*F(x), variance tau*(L(x)^2 + floor)."""
        if tau <= 0:
            raise ValueError(f"tau must be positive, got {tau}")
        x = as_state(x, self.dim)
        mean = x + tau * self.drift(x)
        scales = self.noise_scales(x)
        variance = tau * (scales**2 + self.diffusion_params.variance_floor)
        return GaussianTransition(mean=mean, variance=variance)

    def effective_coefficients(self) -> "EffectiveCoefficients":
        """Canonical, gauge-free polynomial coefficients of this model.

        The (a2, a3) factorization of the quadratic drift is not unique
        (rescaling a row of a2 by c and the matching row of a3 by 1/c leaves
        the drift unchanged), and the likelihood only sees (b x)^2, so raw
        matrices are not comparable across fits. The canonical form is:

        * linear[i, j]           coefficient of x_j in F_i (= a1)
        * quadratic[i, p(j, k)]  coefficient of x_j x_k in F_i over unordered
                                 pairs j <= k
        * diffusion_linear       b with each row flipped so that its first
                                 nonzero entry (bias included, when present)
                                 is nonnegative
        """
        d = self.dim
        a2 = self.drift_params.a2
        a3 = self.drift_params.a3
        pairs = pair_indices(d)
        quadratic = np.empty((d, len(pairs)))
        for col, (j, k) in enumerate(pairs):
            if j == k:
                quadratic[:, col] = a2[:, j] * a3[:, j]
            else:
                quadratic[:, col] = a2[:, j] * a3[:, k] + a2[:, k] * a3[:, j]

        b = self.diffusion_params.b.copy()
        bias = self.diffusion_params.bias
        bias = None if bias is None else bias.copy()
        for i in range(d):
            row = b[i] if bias is None else np.append(b[i], bias[i])
            nonzero = np.nonzero(row)[0]
            if nonzero.size and row[nonzero[0]] < 0:
                b[i] = -b[i]
                if bias is not None:
                    bias[i] = -bias[i]
        return EffectiveCoefficients(
            linear=self.drift_params.a1.copy(),
            quadratic=quadratic,
            diffusion_linear=b,
            diffusion_bias=bias,
        )

    def to_dict(self) -> dict:
        doc = {
            "dim": self.dim,
            "a1": self.drift_params.a1.tolist(),
            "a2": self.drift_params.a2.tolist(),
            "a3": self.drift_params.a3.tolist(),
            "b": self.diffusion_params.b.tolist(),
            "variance_floor": self.diffusion_params.variance_floor,
        }
        if self.diffusion_params.bias is not None:
            doc["bias"] = self.diffusion_params.bias.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SdeModel":
        drift = DriftParams(a1=doc["a1"], a2=doc["a2"], a3=doc["a3"])
        diffusion = DiffusionParams(
            b=doc["b"],
            bias=doc.get("bias"),
            variance_floor=doc.get("variance_floor", 1e-6),
        )
        model = cls(drift_params=drift, diffusion_params=diffusion)
        if "dim" in doc and doc["dim"] != model.dim:
            raise DimensionMismatchError(
                f"declared dim {doc['dim']} does not match matrices of dim {model.dim}"
            )
        return model


def pair_indices(d: int) -> list[tuple[int, int]]:
    """Unordered index pairs (j, k) with j <= k, in canonical order."""
    return [(j, k) for j in range(d) for k in range(j, d)]


@dataclass(frozen=True)
class EffectiveCoefficients:
    """Identifiable polynomial form of an SdeModel, used for comparisons.

    Coefficient labels (``labels()``) follow the layout of ``as_vector()``:
    ``linear:i,j`` row-major, then ``quad:i,j,k`` per row over pairs j <= k,
    then ``diff:i,j`` row-major, then ``diffbias:i`` when a bias is present.
    """

    linear: np.ndarray
    quadratic: np.ndarray
    diffusion_linear: np.ndarray
    diffusion_bias: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.linear.shape[0]

    def labels(self, include_diffusion: bool = True) -> list[str]:
        d = self.dim
        out = [f"linear:{i},{j}" for i in range(d) for j in range(d)]
        out += [f"quad:{i},{j},{k}" for i in range(d) for (j, k) in pair_indices(d)]
        if include_diffusion:
            out += [f"diff:{i},{j}" for i in range(d) for j in range(d)]
            if self.diffusion_bias is not None:
                out += [f"diffbias:{i}" for i in range(d)]
        return out

    def as_vector(self, include_diffusion: bool = True) -> np.ndarray:
        parts = [self.linear.ravel(), self.quadratic.ravel()]
        if include_diffusion:
            parts.append(self.diffusion_linear.ravel())
            if self.diffusion_bias is not None:
                parts.append(self.diffusion_bias.ravel())
        return np.concatenate(parts)


def save_model(model: SdeModel, path) -> None:
    """Write a model as JSON. Round-trips all finite float64 values exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> SdeModel:
    with open(path, encoding="utf-8") as fh:
        return SdeModel.from_dict(json.load(fh))
