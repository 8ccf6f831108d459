"""Maximum-likelihood fitting of the parametric SDE from one trajectory.

The loss over a trajectory with step tau sums, over consecutive pairs
t = 0..T-1, the Gaussian transition negative log-likelihood terms

    || x_{t+1} - m_t ||^2_{Sigma_t^{-1}}  +  log |Sigma_t|

with m_t = x_t + tau * F(x_t) and Sigma_t = tau * diag(L(x_t)^2 + eps)
(constant offsets dropped). The optimizer minimizes the per-pair mean of the
same quantity (same argmin, learning-rate invariant to T). With
``fit_diffusion=False`` the covariance is fixed to the identity and the loss
reduces exactly to the sum of squared one-step prediction errors, which is
the deterministic baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from emsde import backends
from emsde.backends import numpy_backend
from emsde.errors import TrainingDivergedError
from emsde.integrate import Trajectory
from emsde.model import DiffusionParams, DriftParams, SdeModel

__all__ = [
    "TrainConfig",
    "LossBreakdown",
    "LossGradient",
    "LossHistory",
    "FitResult",
    "GradientCheckReport",
    "nll_loss",
    "nll_gradient",
    "fit",
    "check_gradient",
    "load_train_config",
]

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_OFFSET = 1e-8
_PLATEAU_WINDOW = 100


@dataclass(frozen=True)
class TrainConfig:
    """Settings for one fit.

    ``batch=None`` means full-batch (deterministic) gradients; an integer
    requests uniform random transition-pair minibatches (sampled with
    replacement), which are unbiased because pairs enter the likelihood
    independently.
    ``freeze_zero_diffusion_rows`` pins the named rows of the diffusion
    matrix (and bias) to zero throughout training.
    """

    learning_rate: float = 1e-3
    max_iters: int = 5000
    batch: int | None = None
    tolerance: float | None = 1e-8
    init_scale: float = 0.05
    seed: int = 0
    fit_diffusion: bool = True
    freeze_zero_diffusion_rows: tuple[int, ...] | None = None
    variance_floor: float = 1e-6
    affine_diffusion: bool = False
    lr_decay: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.batch is not None and self.batch < 1:
            raise ValueError(f"batch must be >= 1 or None, got {self.batch}")
        if self.init_scale <= 0:
            raise ValueError(f"init_scale must be positive, got {self.init_scale}")
        if self.tolerance is not None and self.tolerance < 0:
            raise ValueError(f"tolerance must be >= 0 or None, got {self.tolerance}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.variance_floor < 0:
            raise ValueError(f"variance_floor must be >= 0, got {self.variance_floor}")
        if self.freeze_zero_diffusion_rows is not None:
            object.__setattr__(
                self, "freeze_zero_diffusion_rows",
                tuple(int(r) for r in self.freeze_zero_diffusion_rows),
            )

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_iters": self.max_iters,
            "batch": self.batch,
            "tolerance": self.tolerance,
            "init_scale": self.init_scale,
            "seed": self.seed,
            "fit_diffusion": self.fit_diffusion,
            "freeze_zero_diffusion_rows": (
                None
                if self.freeze_zero_diffusion_rows is None
                else list(self.freeze_zero_diffusion_rows)
            ),
            "variance_floor": self.variance_floor,
            "affine_diffusion": self.affine_diffusion,
            "lr_decay": self.lr_decay,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        doc = dict(doc)
        if doc.get("freeze_zero_diffusion_rows") is not None:
            doc["freeze_zero_diffusion_rows"] = tuple(doc["freeze_zero_diffusion_rows"])
        return cls(**doc)


def load_train_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return TrainConfig.from_dict(json.load(fh))


@dataclass(frozen=True)
class LossBreakdown:
    """Summed loss over all pairs, split into its two terms."""

    total: float
    mahalanobis: float
    logdet: float
    per_pair_mean: float


@dataclass(frozen=True)
class LossGradient:
    """Partial derivatives of the summed loss w.r.t. every parameter entry."""

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    b: np.ndarray
    bias: np.ndarray | None = None


@dataclass
class LossHistory:
    """Per-iteration loss records from a fit."""

    iters: np.ndarray
    total: np.ndarray
    mahalanobis: np.ndarray
    logdet: np.ndarray

    def __len__(self):
        return len(self.iters)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iter,total,mahalanobis,logdet\n")
            for i, t, m, l in zip(self.iters, self.total, self.mahalanobis, self.logdet):
                fh.write(f"{i},{t:.17g},{m:.17g},{l:.17g}\n")


@dataclass(frozen=True)
class FitResult:
    model: SdeModel
    history: LossHistory
    best_iter: int
    stopped_early: bool


def _pairs(traj: Trajectory):
    x = np.ascontiguousarray(traj.states[:-1])
    dx = np.ascontiguousarray(traj.states[1:] - traj.states[:-1])
    return x, dx


def _param_arrays(model: SdeModel):
    d = model.dim
    q = model.diffusion_params
    bias = np.zeros(d) if q.bias is None else np.ascontiguousarray(q.bias)
    return (
        np.ascontiguousarray(model.drift_params.a1),
        np.ascontiguousarray(model.drift_params.a2),
        np.ascontiguousarray(model.drift_params.a3),
        np.ascontiguousarray(q.b),
        bias,
    )


def _diagnose_nonfinite(a1, a2, a3, b, bias, eps, tau, x, dx, identity_cov):
    per_pair = numpy_backend.pair_losses(a1, a2, a3, b, bias, eps, tau, x, dx, identity_cov)
    bad = np.nonzero(~np.isfinite(per_pair))[0]
    return int(bad[0]) if bad.size else None


def nll_loss(model: SdeModel, traj: Trajectory, *, identity_covariance: bool = False) -> LossBreakdown:
    """Transition negative log-likelihood of the trajectory under the model.

    Raises TrainingDivergedError naming the first offending pair when the
    result is not finite (e.g. zero variance with a zero floor).
    """
    x, dx = _pairs(traj)
    a1, a2, a3, b, bias = _param_arrays(model)
    eps = model.diffusion_params.variance_floor
    kernel = backends.active_backend()
    mah, logdet, _ = kernel.nll_terms(
        a1, a2, a3, b, bias, eps, traj.tau, x, dx, identity_covariance, False
    )
    total = mah + logdet
    if not np.isfinite(total):
        pair = _diagnose_nonfinite(a1, a2, a3, b, bias, eps, traj.tau, x, dx,
                                   identity_covariance)
        raise TrainingDivergedError(f"non-finite loss at pair {pair}", step=pair)
    return LossBreakdown(
        total=total, mahalanobis=mah, logdet=logdet, per_pair_mean=total / x.shape[0]
    )


def nll_gradient(
    model: SdeModel,
    traj: Trajectory,
    *,
    identity_covariance: bool = False,
    frozen_diffusion_rows=None,
) -> LossGradient:
    """Analytic gradient of the summed loss w.r.t. a1, a2, a3, b (and bias)."""
    x, dx = _pairs(traj)
    a1, a2, a3, b, bias = _param_arrays(model)
    eps = model.diffusion_params.variance_floor
    kernel = backends.active_backend()
    _, _, grads = kernel.nll_terms(
        a1, a2, a3, b, bias, eps, traj.tau, x, dx, identity_covariance, True
    )
    ga1, ga2, ga3, gb, gbias = grads
    if identity_covariance:
        gb = np.zeros_like(gb)
        gbias = np.zeros_like(gbias)
    if frozen_diffusion_rows:
        for row in frozen_diffusion_rows:
            gb[row, :] = 0.0
            gbias[row] = 0.0
    return LossGradient(
        a1=ga1, a2=ga2, a3=ga3, b=gb,
        bias=gbias if model.diffusion_params.bias is not None else None,
    )


def _init_params(dim: int, cfg: TrainConfig, rng: np.random.Generator):
    s = cfg.init_scale
    a1 = rng.uniform(-s, s, (dim, dim))
    a2 = rng.uniform(-s, s, (dim, dim))
    a3 = rng.uniform(-s, s, (dim, dim))
    if cfg.fit_diffusion:
        b = rng.uniform(-s, s, (dim, dim))
        bias = rng.uniform(-s, s, dim) if cfg.affine_diffusion else None
    else:
        b = np.zeros((dim, dim))
        bias = None
    if cfg.freeze_zero_diffusion_rows:
        for row in cfg.freeze_zero_diffusion_rows:
            b[row, :] = 0.0
            if bias is not None:
                bias[row] = 0.0
    return a1, a2, a3, b, bias


def _build_model(a1, a2, a3, b, bias, variance_floor) -> SdeModel:
    return SdeModel(
        drift_params=DriftParams(a1=a1, a2=a2, a3=a3),
        diffusion_params=DiffusionParams(b=b, bias=bias, variance_floor=variance_floor),
    )


def fit(traj: Trajectory, cfg: TrainConfig) -> FitResult:
    """Fit model parameters to one trajectory by adaptive gradient descent.

    Uses Adam (decay 0.9/0.999, offset 1e-8, bias-corrected) on the per-pair
    mean loss, with a plateau stop: training ends once the best loss has not
    improved by a relative ``cfg.tolerance`` within the last 100 iterations.
    Returns the parameters achieving the minimum recorded loss. Reproducible
    given ``cfg.seed``.

    History rows hold the summed-loss breakdown evaluated at the parameters
    entering each iteration; under minibatching they are unbiased estimates
    rescaled to the full pair count, while best-parameter tracking and the
    plateau stop use exact full-trajectory evaluations taken every 100
    iterations (batch losses are too noisy to rank iterates).
    """
    x_all, dx_all = _pairs(traj)
    n_pairs = x_all.shape[0]
    dim = traj.dim
    tau = traj.tau
    eps = cfg.variance_floor
    identity_cov = not cfg.fit_diffusion
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    a1, a2, a3, b, bias = _init_params(dim, cfg, rng)
    bias_arr = np.zeros(dim) if bias is None else bias

    params = [a1, a2, a3]
    if cfg.fit_diffusion:
        params.append(b)
        if bias is not None:
            params.append(bias)
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]

    kernel = backends.active_backend()
    hist_total = np.empty(cfg.max_iters)
    hist_mah = np.empty(cfg.max_iters)
    hist_logdet = np.empty(cfg.max_iters)
    n_done = 0
    best_total = np.inf
    best_params = None
    best_iter = 0
    stopped_early = False

    minibatched = cfg.batch is not None and cfg.batch < n_pairs
    eval_values = []  # exact-loss evaluations driving best-tracking and the stop

    def full_total():
        mah_f, logdet_f, _ = kernel.nll_terms(
            a1, a2, a3, b, bias_arr, eps, tau, x_all, dx_all, identity_cov, False
        )
        return mah_f + logdet_f

    for it in range(cfg.max_iters):
        if minibatched:
            idx = rng.integers(0, n_pairs, size=cfg.batch)
            x, dx = np.ascontiguousarray(x_all[idx]), np.ascontiguousarray(dx_all[idx])
        else:
            x, dx = x_all, dx_all
        n_used = x.shape[0]
        mah, logdet, grads = kernel.nll_terms(
            a1, a2, a3, b, bias_arr, eps, tau, x, dx, identity_cov, True
        )
        total = mah + logdet
        rescale = n_pairs / n_used
        hist_total[it] = total * rescale
        hist_mah[it] = mah * rescale
        hist_logdet[it] = logdet * rescale
        n_done = it + 1
        if not np.isfinite(total):
            history = LossHistory(
                iters=np.arange(n_done), total=hist_total[:n_done].copy(),
                mahalanobis=hist_mah[:n_done].copy(), logdet=hist_logdet[:n_done].copy(),
            )
            raise TrainingDivergedError(
                f"loss diverged at iteration {it}", step=it, history=history
            )

        # rank iterates on the exact loss: every iteration when full-batch,
        # else at checkpoints (batch losses are too noisy to rank on)
        if minibatched:
            checkpoint = it % _PLATEAU_WINDOW == 0 or it == cfg.max_iters - 1
            ranked = full_total() if checkpoint else None
        else:
            ranked = hist_total[it]
        if ranked is not None:
            eval_values.append(ranked)
            if ranked < best_total:
                best_total = ranked
                best_params = (a1.copy(), a2.copy(), a3.copy(), b.copy(),
                               None if bias is None else bias.copy())
                best_iter = it
            # plateau: the best of the latest evaluation window no longer
            # improves on the best of the window before it
            n_evals = len(eval_values)
            if (cfg.tolerance is not None and n_evals >= 2 * _PLATEAU_WINDOW
                    and n_evals % _PLATEAU_WINDOW == 0):
                cur = min(eval_values[-_PLATEAU_WINDOW:])
                prev = min(eval_values[-2 * _PLATEAU_WINDOW : -_PLATEAU_WINDOW])
                if prev - cur < cfg.tolerance * max(1.0, abs(prev)):
                    stopped_early = True
                    break

        ga1, ga2, ga3, gb, gbias = grads
        scale = 1.0 / n_used
        grad_list = [ga1 * scale, ga2 * scale, ga3 * scale]
        if cfg.fit_diffusion:
            gb = gb * scale
            if cfg.freeze_zero_diffusion_rows:
                for row in cfg.freeze_zero_diffusion_rows:
                    gb[row, :] = 0.0
            grad_list.append(gb)
            if bias is not None:
                gbias = gbias * scale
                if cfg.freeze_zero_diffusion_rows:
                    for row in cfg.freeze_zero_diffusion_rows:
                        gbias[row] = 0.0
                grad_list.append(gbias)

        t_adam = it + 1
        c1 = 1.0 - _ADAM_BETA1**t_adam
        c2 = 1.0 - _ADAM_BETA2**t_adam
        if cfg.lr_decay < 1.0:
            lr = cfg.learning_rate * cfg.lr_decay ** (it / max(1, cfg.max_iters - 1))
        else:
            lr = cfg.learning_rate
        for p, g, m, v in zip(params, grad_list, m_state, v_state):
            m *= _ADAM_BETA1
            m += (1.0 - _ADAM_BETA1) * g
            v *= _ADAM_BETA2
            v += (1.0 - _ADAM_BETA2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + _ADAM_OFFSET)

    history = LossHistory(
        iters=np.arange(n_done), total=hist_total[:n_done].copy(),
        mahalanobis=hist_mah[:n_done].copy(), logdet=hist_logdet[:n_done].copy(),
    )
    a1, a2, a3, b, bias = best_params
    model = _build_model(a1, a2, a3, b, bias, cfg.variance_floor)
    return FitResult(model=model, history=history, best_iter=best_iter,
                     stopped_early=stopped_early)


@dataclass(frozen=True)
class GradientCheckReport:
    """Max relative disagreement between analytic and central-difference gradients."""

    step: float
    tolerance: float
    per_block: dict
    max_rel_error: float
    failed_blocks: tuple

    @property
    def ok(self) -> bool:
        return not self.failed_blocks


def check_gradient(
    model: SdeModel,
    traj: Trajectory,
    step: float = 1e-5,
    tolerance: float = 1e-5,
    *,
    identity_covariance: bool = False,
) -> GradientCheckReport:
    """Compare the analytic gradient against central finite differences.

    Each parameter entry p is perturbed by h = step * max(|p|, 1); the
    entrywise relative error is |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8) and blocks exceeding `tolerance` are flagged.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x, dx = _pairs(traj)
    eps = model.diffusion_params.variance_floor
    tau = traj.tau
    arrays = dict(zip(("a1", "a2", "a3", "b"), _param_arrays(model)[:4]))
    bias = _param_arrays(model)[4]
    has_bias = model.diffusion_params.bias is not None
    if has_bias:
        arrays["bias"] = bias

    def loss_at(blocks, bias_vec):
        mah, logdet, _ = numpy_backend.nll_terms(
            blocks["a1"], blocks["a2"], blocks["a3"], blocks["b"], bias_vec,
            eps, tau, x, dx, identity_covariance, False,
        )
        return mah + logdet

    grad = nll_gradient(model, traj, identity_covariance=identity_covariance)
    analytic = {"a1": grad.a1, "a2": grad.a2, "a3": grad.a3, "b": grad.b}
    if has_bias:
        analytic["bias"] = grad.bias

    per_block = {}
    for name, arr in arrays.items():
        work = {k: v.copy() for k, v in arrays.items() if k != "bias"}
        bias_work = arrays["bias"].copy() if has_bias else bias
        target = bias_work if name == "bias" else work[name]
        ref = analytic[name]
        worst = 0.0
        for ij in np.ndindex(target.shape):
            base = target[ij]
            h = step * max(abs(base), 1.0)
            target[ij] = base + h
            up = loss_at(work, bias_work)
            target[ij] = base - h
            down = loss_at(work, bias_work)
            target[ij] = base
            numeric = (up - down) / (2.0 * h)
            a = ref[ij]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        per_block[name] = worst
    failed = tuple(k for k, v in per_block.items() if v > tolerance)
    return GradientCheckReport(
        step=step,
        tolerance=tolerance,
        per_block=per_block,
        max_rel_error=max(per_block.values()),
        failed_blocks=failed,
    )
