"""Nonparametric gradient-matching baseline.

Drift is estimated as the local/ensemble mean one-step increment divided by
tau; squared diffusion as the residual increment variance divided by tau, so
both target the continuous-time fields rather than per-step increments. Two
readings are supported:

* ensemble mode — several trajectories on one aligned time grid: average
  across realizations at each time index (anchored at the ensemble-mean
  state);
* trajectory mode — a single trajectory (or unaligned pool): average over
  the k nearest observed states.

A built field is immutable and can drive Euler-Maruyama simulation directly
(it exposes ``dim``, ``drift`` and ``noise_scales``, answering queries with
k-nearest-anchor averages).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from emsde.errors import DimensionMismatchError
from emsde.model import as_state

__all__ = ["NonparametricField", "gradient_match", "save_field_csv", "load_field_csv"]


@dataclass(frozen=True)
class NonparametricField:
    """Tabulated drift / squared-diffusion estimates anchored at observed states."""

    anchors: np.ndarray  # (m, d)
    drift_estimates: np.ndarray  # (m, d)
    diffusion_sq: np.ndarray  # (m, d), nonnegative
    tau: float
    neighbor_count: int = 20
    extrapolation_radius: float | None = None
    _tree: cKDTree = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=np.float64))
        drift = np.atleast_2d(np.asarray(self.drift_estimates, dtype=np.float64))
        diff2 = np.atleast_2d(np.asarray(self.diffusion_sq, dtype=np.float64))
        if anchors.shape[0] == 0:
            raise ValueError("field needs at least one anchor")
        if not (anchors.shape == drift.shape == diff2.shape):
            raise DimensionMismatchError("anchors, drift and diffusion_sq must share a shape")
        if np.any(diff2 < 0):
            raise ValueError("squared-diffusion estimates must be nonnegative")
        if self.neighbor_count < 1:
            raise ValueError(f"neighbor_count must be >= 1, got {self.neighbor_count}")
        for name, arr in (("anchors", anchors), ("drift_estimates", drift),
                          ("diffusion_sq", diff2)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_tree", cKDTree(anchors))

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]

    def _neighbors(self, x):
        x = as_state(x, self.dim)
        k = min(self.neighbor_count, self.n_anchors)
        dist, idx = self._tree.query(x, k=k)
        idx = np.atleast_1d(idx)
        dist = np.atleast_1d(dist)
        if self.extrapolation_radius is not None and dist.min() > self.extrapolation_radius:
            warnings.warn(
                "query state lies outside the extrapolation radius of every anchor; "
                "using nearest anchors anyway",
                RuntimeWarning,
                stacklevel=3,
            )
        return idx

    def drift(self, x) -> np.ndarray:
        return self.drift_estimates[self._neighbors(x)].mean(axis=0)

    def noise_scales(self, x) -> np.ndarray:
        return np.sqrt(self.diffusion_sq[self._neighbors(x)].mean(axis=0))


def _aligned(trajectories) -> bool:
    first = trajectories[0]
    return all(t.states.shape == first.states.shape for t in trajectories)


def gradient_match(trajectories, *, neighbor_count: int = 20,
                   extrapolation_radius: float | None = None) -> NonparametricField:
    """Build a NonparametricField from one or more trajectories.

    All trajectories must share one tau. Anchors whose neighborhood holds
    fewer than two increment samples are dropped (variance is undefined
    there) and the drop count is reported as a RuntimeWarning.
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    tau = trajectories[0].tau
    dim = trajectories[0].dim
    for t in trajectories:
        if abs(t.tau - tau) > 1e-9 * tau:
            raise ValueError("trajectories must share one tau")
        if t.dim != dim:
            raise DimensionMismatchError("trajectories must share one dimension")

    if len(trajectories) >= 2 and _aligned(trajectories):
        # ensemble reading: realizations averaged at each time index
        stack = np.stack([t.states for t in trajectories])  # (n, T+1, d)
        increments = np.diff(stack, axis=1)  # (n, T, d)
        anchors = stack[:, :-1, :].mean(axis=0)
        drift = increments.mean(axis=0) / tau
        diff2 = increments.var(axis=0, ddof=1) / tau
        dropped = 0
    else:
        # single-trajectory / pooled reading: k-nearest-state neighborhoods
        x = np.concatenate([t.states[:-1] for t in trajectories])
        dx = np.concatenate([np.diff(t.states, axis=0) for t in trajectories])
        tree = cKDTree(x)
        k = min(neighbor_count, x.shape[0])
        _, idx = tree.query(x, k=k)
        idx = idx.reshape(x.shape[0], k)
        keep = k >= 2
        if keep:
            samples = dx[idx]  # (m, k, d)
            anchors = x
            drift = samples.mean(axis=1) / tau
            diff2 = samples.var(axis=1, ddof=1) / tau
            dropped = 0
        else:
            anchors = np.empty((0, dim))
            drift = np.empty((0, dim))
            diff2 = np.empty((0, dim))
            dropped = x.shape[0]

    if dropped:
        warnings.warn(
            f"dropped {dropped} anchors with fewer than 2 neighborhood samples",
            RuntimeWarning,
            stacklevel=2,
        )
    if anchors.shape[0] == 0:
        raise ValueError("no usable anchors; increase data or neighbor_count")
    return NonparametricField(
        anchors=anchors, drift_estimates=drift, diffusion_sq=diff2, tau=tau,
        neighbor_count=neighbor_count, extrapolation_radius=extrapolation_radius,
    )


def save_field_csv(field_: NonparametricField, path) -> None:
    """Persist anchors, drift and squared-diffusion estimates as CSV.

    The first line is a metadata comment carrying tau and the neighbor count
    so the file is self-contained for simulation.
    """
    d = field_.dim
    cols = (
        [f"x{i}" for i in range(d)]
        + [f"f{i}" for i in range(d)]
        + [f"l2_{i}" for i in range(d)]
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# tau={field_.tau:.17g} neighbor_count={field_.neighbor_count}\n")
        fh.write(",".join(cols) + "\n")
        for a, f, l2 in zip(field_.anchors, field_.drift_estimates, field_.diffusion_sq):
            row = np.concatenate([a, f, l2])
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_field_csv(path) -> NonparametricField:
    with open(path, encoding="utf-8") as fh:
        meta = fh.readline().strip()
        if not meta.startswith("# tau="):
            raise ValueError(f"{path}: missing field metadata line")
        parts = dict(item.split("=") for item in meta[2:].split())
        tau = float(parts["tau"])
        k = int(parts["neighbor_count"])
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if len(header) % 3 != 0:
        raise ValueError(f"{path}: header must hold 3*d columns")
    d = len(header) // 3
    if data.shape[1] != 3 * d:
        raise ValueError(f"{path}: row width does not match header")
    return NonparametricField(
        anchors=data[:, :d], drift_estimates=data[:, d : 2 * d],
        diffusion_sq=data[:, 2 * d :], tau=tau, neighbor_count=k,
    )
