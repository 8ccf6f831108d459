"""Quantitative evaluation: coefficient RMSE in canonical coordinates,
learned-parameter statistics, moment-curve comparison, attractor-topology
classification and gain rates.

Model comparisons run on EffectiveCoefficients (the identifiable canonical
form), so they are unaffected by the drift factorization gauge and by
diffusion row signs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emsde.errors import DimensionMismatchError, UndefinedGainError
from emsde.integrate import Trajectory
from emsde.model import SdeModel
from emsde.systems import MomentCurve

__all__ = [
    "RmseReport",
    "TopologyVerdict",
    "MomentComparison",
    "coefficient_rmse",
    "parameter_statistics",
    "moment_comparison",
    "attractor_topology",
    "gain_rate",
]


@dataclass(frozen=True)
class RmseReport:
    """Coefficient-space error between a fitted and a reference model."""

    global_rmse: float
    drift_rmse: float
    diffusion_rmse: float
    nonzero_coeff_rmse: float
    zero_coeff_max_abs: float
    per_coefficient: dict  # label -> absolute error

    def to_dict(self) -> dict:
        return {
            "global_rmse": self.global_rmse,
            "drift_rmse": self.drift_rmse,
            "diffusion_rmse": self.diffusion_rmse,
            "nonzero_coeff_rmse": self.nonzero_coeff_rmse,
            "zero_coeff_max_abs": self.zero_coeff_max_abs,
            "per_coefficient": dict(self.per_coefficient),
        }


def _aligned_vectors(fitted: SdeModel, truth: SdeModel):
    """Canonical coefficient vectors on a common label set.

    When exactly one side carries a diffusion bias, the other side
    contributes zeros for the bias labels.
    """
    cf = fitted.effective_coefficients()
    ct = truth.effective_coefficients()
    if cf.dim != ct.dim:
        raise DimensionMismatchError(
            f"models have different dimensions: {cf.dim} vs {ct.dim}"
        )
    d = cf.dim
    if (cf.diffusion_bias is None) != (ct.diffusion_bias is None):
        zeros = np.zeros(d)
        if cf.diffusion_bias is None:
            vf = np.concatenate([cf.as_vector(), zeros])
            vt = ct.as_vector()
            labels = ct.labels()
        else:
            vf = cf.as_vector()
            vt = np.concatenate([ct.as_vector(), zeros])
            labels = cf.labels()
    else:
        vf = cf.as_vector()
        vt = ct.as_vector()
        labels = cf.labels()
    n_drift = d * d + cf.quadratic.shape[1] * d
    return labels, vf, vt, n_drift


def coefficient_rmse(fitted: SdeModel, truth: SdeModel) -> RmseReport:
    """RMSE over all canonical coefficients, with drift/diffusion block splits.

    global_rmse is the root mean square over every labeled coefficient;
    nonzero_coeff_rmse restricts to coefficients that are nonzero in the
    reference, and zero_coeff_max_abs is the largest absolute error among
    coefficients the reference says should vanish.
    """
    labels, vf, vt, n_drift = _aligned_vectors(fitted, truth)
    err = np.abs(vf - vt)
    zero_mask = vt == 0.0
    nonzero = err[~zero_mask]
    return RmseReport(
        global_rmse=float(np.sqrt(np.mean(err**2))),
        drift_rmse=float(np.sqrt(np.mean(err[:n_drift] ** 2))),
        diffusion_rmse=float(np.sqrt(np.mean(err[n_drift:] ** 2))),
        nonzero_coeff_rmse=float(np.sqrt(np.mean(nonzero**2))) if nonzero.size else 0.0,
        zero_coeff_max_abs=float(err[zero_mask].max()) if zero_mask.any() else 0.0,
        per_coefficient={lab: float(e) for lab, e in zip(labels, err)},
    )


def get_coefficient(model: SdeModel, label: str) -> float:
    """Fetch one canonical coefficient by label (e.g. 'linear:0,0', 'diff:0,0')."""
    coeffs = model.effective_coefficients()
    vec = coeffs.as_vector()
    labels = coeffs.labels()
    try:
        return float(vec[labels.index(label)])
    except ValueError:
        raise KeyError(f"unknown coefficient label {label!r} for dim {coeffs.dim}") from None


def parameter_statistics(models, label: str) -> tuple[float, float]:
    """Sample mean and unbiased variance of one canonical coefficient across models."""
    if len(models) < 2:
        raise ValueError("need at least 2 models for parameter statistics")
    values = np.array([get_coefficient(m, label) for m in models])
    return float(values.mean()), float(values.var(ddof=1))


@dataclass(frozen=True)
class MomentComparison:
    """Per-time errors between a theoretical and an empirical moment curve."""

    times: np.ndarray
    mean_abs_error: np.ndarray  # (n, d)
    mean_rel_error: np.ndarray
    variance_abs_error: np.ndarray
    variance_rel_error: np.ndarray

    def max_mean_abs_error(self) -> float:
        return float(self.mean_abs_error.max())

    def max_variance_abs_error(self) -> float:
        return float(self.variance_abs_error.max())


def moment_comparison(theoretical: MomentCurve, empirical: MomentCurve) -> MomentComparison:
    """Absolute and relative moment errors on a common time grid."""
    if theoretical.times.shape != empirical.times.shape or not np.allclose(
        theoretical.times, empirical.times, rtol=1e-9, atol=0
    ):
        raise DimensionMismatchError("moment curves are on different time grids")
    if theoretical.mean.shape != empirical.mean.shape:
        raise DimensionMismatchError("moment curves have different dimensions")
    mean_abs = np.abs(empirical.mean - theoretical.mean)
    var_abs = np.abs(empirical.variance - theoretical.variance)
    mean_scale = np.maximum(np.abs(theoretical.mean), 1e-300)
    var_scale = np.maximum(np.abs(theoretical.variance), 1e-300)
    return MomentComparison(
        times=theoretical.times,
        mean_abs_error=mean_abs,
        mean_rel_error=mean_abs / mean_scale,
        variance_abs_error=var_abs,
        variance_rel_error=var_abs / var_scale,
    )


@dataclass(frozen=True)
class TopologyVerdict:
    """Two-lobe attractor check plus per-component quadratic variation."""

    both_lobes: bool
    lobe_fractions: tuple[float, float]  # (x < -margin, x > +margin)
    crossings: int
    quadratic_variation: np.ndarray  # (d,)

    def to_dict(self) -> dict:
        return {
            "both_lobes": bool(self.both_lobes),
            "lobe_fractions": [float(v) for v in self.lobe_fractions],
            "crossings": int(self.crossings),
            "quadratic_variation": [float(v) for v in self.quadratic_variation],
        }


def attractor_topology(
    traj: Trajectory,
    margin: float = 1.0,
    min_fraction: float = 0.10,
    min_crossings: int = 5,
) -> TopologyVerdict:
    """Classify whether a 3-D trajectory visits both wings of the attractor.

    Lobes are x < -margin and x > +margin. The verdict passes when each lobe
    holds at least min_fraction of the samples and the trajectory switches
    lobes at least min_crossings times. Per-component quadratic variation
    (sum of squared increments) is reported to tell stochastic trajectories
    from deterministic ones.
    """
    if traj.dim != 3:
        raise DimensionMismatchError(f"topology check needs a 3-D trajectory, got d={traj.dim}")
    x = traj.states[:, 0]
    n = x.shape[0]
    neg = x < -margin
    pos = x > margin
    labels = np.zeros(n, dtype=np.int8)
    labels[neg] = -1
    labels[pos] = 1
    visited = labels[labels != 0]
    crossings = int(np.count_nonzero(np.diff(visited))) if visited.size else 0
    frac_neg = float(np.count_nonzero(neg)) / n
    frac_pos = float(np.count_nonzero(pos)) / n
    qv = np.sum(np.diff(traj.states, axis=0) ** 2, axis=0)
    both = frac_neg >= min_fraction and frac_pos >= min_fraction and crossings >= min_crossings
    return TopologyVerdict(
        both_lobes=bool(both),
        lobe_fractions=(frac_neg, frac_pos),
        crossings=crossings,
        quadratic_variation=qv,
    )


def gain_rate(rmse_a: float, rmse_b: float) -> float:
    """Relative improvement of method a over baseline b: (b - a) / b."""
    if rmse_b == 0:
        raise UndefinedGainError("gain rate undefined: baseline RMSE is zero")
    return (rmse_b - rmse_a) / rmse_b
