"""Command-line interface.

Subcommands
-----------
simulate    generate trajectories from a named system or a model file
train       fit a model to a trajectory (maximum likelihood or deterministic)
evaluate    coefficient-space RMSE and parameter statistics against a truth
moments     theoretical vs empirical mean/variance curves (1-D systems)
attractor   simulate a 3-D trajectory and classify its attractor topology
gradmatch   nonparametric drift/diffusion estimation and simulation
experiment  run a JSON recipe (multi-run protocol) end to end

Exit codes: 0 success, 1 numerical failure (divergence), 2 usage/input
error. All commands are deterministic under fixed flags and seeds within
one build. The EMSDE_OUT_DIR environment variable supplies the default
output directory for commands that write one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from emsde import backends
from emsde.baselines import gradient_match, save_field_csv
from emsde.errors import DivergenceError, EmsdeError, TrainingDivergedError
from emsde.evaluate import (
    attractor_topology,
    coefficient_rmse,
    moment_comparison,
    parameter_statistics,
)
from emsde.experiments import ExperimentSpec, build_system, run_experiment, truth_model
from emsde.integrate import (
    SimConfig,
    read_trajectory_csv,
    simulate,
    simulate_ensemble,
    write_trajectory_csv,
)
from emsde.model import SdeModel, load_model, save_model
from emsde.svgplot import Curve, Panel, write_svg
from emsde.systems import GbmSystem, StochasticLorenzSystem, empirical_moments
from emsde.train import TrainConfig, fit, load_train_config


def _parse_state(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ValueError(f"cannot parse state vector {text!r}; expected e.g. '1,1,1'") from None


def _add_system_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mu", type=float, default=0.5, help="GBM drift rate")
    p.add_argument("--sigma", type=float, default=1.0, help="GBM volatility")
    p.add_argument("--gbm-x0", type=float, default=1.0, help="GBM initial value")
    p.add_argument("--gamma", type=float, default=10.0, help="Lorenz noise level (higher = weaker)")
    p.add_argument("--sl-sigma", type=float, default=10.0)
    p.add_argument("--sl-rho", type=float, default=28.0)
    p.add_argument("--sl-beta", type=float, default=8.0 / 3.0)
    p.add_argument("--shared-noise", action="store_true",
                   help="drive both noisy Lorenz components with one Brownian path")


def _system_from_args(args):
    if args.system == "gbm":
        return GbmSystem(mu=args.mu, sigma=args.sigma, x0=args.gbm_x0)
    if args.system == "slorenz":
        return StochasticLorenzSystem(
            gamma=args.gamma, sigma=args.sl_sigma, rho=args.sl_rho,
            beta=args.sl_beta, shared_noise=args.shared_noise,
        )
    raise ValueError(f"unknown system {args.system!r}")


def _sim_source(system):
    """Simulation source for a named system: the exact model embedding unless
    the literal shared-noise reading was requested (native path)."""
    if getattr(system, "shared_noise", False):
        return system
    if isinstance(system, StochasticLorenzSystem):
        return system.as_sde_model(affine=True)
    return system.as_sde_model()


def _default_x0(args, system) -> list[float]:
    if args.x0 is not None:
        return _parse_state(args.x0)
    if isinstance(system, GbmSystem):
        return [system.x0]
    if isinstance(system, StochasticLorenzSystem):
        return [1.0, 1.0, 1.0]
    raise ValueError("--x0 is required when simulating from a model file")


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    base = os.environ.get("EMSDE_OUT_DIR", "emsde_out")
    return Path(base) / default_name


# ---------------------------------------------------------------- simulate


def _cmd_simulate(args) -> int:
    if args.model:
        source = load_model(args.model)
        system = None
        name = Path(args.model).stem
    else:
        system = _system_from_args(args)
        source = _sim_source(system)
        name = args.system
    x0 = _default_x0(args, system)
    cfg = SimConfig(steps=args.steps, tau=args.tau, seed=args.seed,
                    initial_state=x0, burn_in=args.burn_in)
    out = Path(args.out)
    if args.n_traj == 1:
        traj = simulate(source, cfg)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(traj, out)
    else:
        trajs = simulate_ensemble(source, cfg, args.n_traj)
        out.mkdir(parents=True, exist_ok=True)
        for k, traj in enumerate(trajs):
            write_trajectory_csv(traj, out / f"traj_{k:04d}.csv")
    dim = len(x0)
    print(f"simulated {name}: dim={dim} steps={args.steps} tau={args.tau} "
          f"seed={args.seed} n_traj={args.n_traj} -> {out}")
    return 0


# ------------------------------------------------------------------- train


def _cmd_train(args) -> int:
    if not Path(args.data).exists():
        raise FileNotFoundError(f"data file not found: {args.data}")
    traj = read_trajectory_csv(args.data)
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    overrides = {"fit_diffusion": args.method == "sde"}
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.iters is not None:
        overrides["max_iters"] = args.iters
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.batch is not None:
        overrides["batch"] = args.batch
    if args.init_scale is not None:
        overrides["init_scale"] = args.init_scale
    if args.variance_floor is not None:
        overrides["variance_floor"] = args.variance_floor
    if args.affine:
        overrides["affine_diffusion"] = True
    if args.freeze_rows:
        overrides["freeze_zero_diffusion_rows"] = tuple(
            int(r) for r in args.freeze_rows.split(",")
        )
    doc = cfg.to_dict()
    doc.update(overrides)
    cfg = TrainConfig.from_dict(doc)
    try:
        result = fit(traj, cfg)
    except TrainingDivergedError as err:
        if args.history and err.history is not None:
            err.history.write_csv(args.history)
        print(f"training diverged: {err}", file=sys.stderr)
        return 1
    save_model(result.model, args.out)
    if args.history:
        result.history.write_csv(args.history)
    stop = "plateau" if result.stopped_early else "max_iters"
    print(f"trained {args.method} on {args.data}: pairs={traj.n_steps} "
          f"iters={len(result.history)} best_loss={result.history.total.min():.6g} "
          f"stop={stop} -> {args.out}")
    return 0


# ---------------------------------------------------------------- evaluate


def _truth_from_args(args) -> SdeModel:
    if args.truth_model:
        return load_model(args.truth_model)
    if not args.truth_system:
        raise ValueError("give either --truth-system or --truth-model")
    ns = argparse.Namespace(**vars(args))
    ns.system = args.truth_system
    system = _system_from_args(ns)
    return truth_model(system, affine=args.affine_truth)


def _cmd_evaluate(args) -> int:
    truth = _truth_from_args(args)
    models = {}
    for path in args.models:
        if not Path(path).exists():
            raise FileNotFoundError(f"model file not found: {path}")
        models[Path(path).stem] = load_model(path)
    reports = {stem: coefficient_rmse(m, truth) for stem, m in models.items()}
    doc = {
        "truth": truth.to_dict(),
        "models": {stem: r.to_dict() for stem, r in reports.items()},
    }
    if len(models) >= 2:
        model_list = list(models.values())
        labels = (args.labels.split(",") if args.labels
                  else model_list[0].effective_coefficients().labels())
        doc["parameter_statistics"] = {}
        for lab in labels:
            mean, var = parameter_statistics(model_list, lab)
            doc["parameter_statistics"][lab] = {"mean": mean, "variance": var}
        doc["rmse_statistics"] = {
            "global": _stats([r.global_rmse for r in reports.values()]),
            "drift": _stats([r.drift_rmse for r in reports.values()]),
            "diffusion": _stats([r.diffusion_rmse for r in reports.values()]),
        }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    mean_global = np.mean([r.global_rmse for r in reports.values()])
    print(f"evaluated {len(models)} model(s): mean global rmse={mean_global:.6g} -> {out}")
    return 0


def _stats(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "variance": float(arr.var(ddof=1)) if arr.size > 1 else 0.0,
    }


# ----------------------------------------------------------------- moments


def _write_moment_csv(curve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,mean,variance\n")
        for t, m, v in zip(curve.times, curve.mean[:, 0], curve.variance[:, 0]):
            fh.write(f"{t:.17g},{m:.17g},{v:.17g}\n")


def _cmd_moments(args) -> int:
    truth_sys = GbmSystem(mu=args.mu, sigma=args.sigma, x0=args.gbm_x0)
    out = _out_dir(args, "moments")
    out.mkdir(parents=True, exist_ok=True)
    cfg = SimConfig(steps=args.steps, tau=args.tau, seed=args.seed,
                    initial_state=[truth_sys.x0])
    times = cfg.tau * np.arange(args.steps + 1)
    theo_true = truth_sys.theoretical_moments(times)
    _write_moment_csv(theo_true, out / "theoretical_true.csv")
    emp_true = empirical_moments(simulate_ensemble(truth_sys.as_sde_model(), cfg, args.n_traj))
    _write_moment_csv(emp_true, out / "empirical_true.csv")

    mean_panel = Panel(title="mean", xlabel="t", ylabel="E[x]")
    var_panel = Panel(title="variance", xlabel="t", ylabel="V[x]")
    mean_panel.curves.append(Curve(times, theo_true.mean[:, 0], "true", "#d62728"))
    var_panel.curves.append(Curve(times, theo_true.variance[:, 0], "true", "#d62728"))
    mean_panel.curves.append(Curve(times, emp_true.mean[:, 0], "", "#d62728", dashed=True))
    var_panel.curves.append(Curve(times, emp_true.variance[:, 0], "", "#d62728", dashed=True))

    errors = {"empirical_true": _moment_errors(theo_true, emp_true)}
    palette = ["#2ca02c", "#9467bd", "#1f77b4", "#ff7f0e"]
    for idx, path in enumerate(args.models or []):
        model = load_model(path)
        if model.dim != 1:
            raise ValueError(f"{path}: moment curves need a 1-D model, got dim {model.dim}")
        stem = Path(path).stem
        coeffs = model.effective_coefficients()
        mu_hat = float(coeffs.linear[0, 0])
        sigma_hat = float(abs(coeffs.diffusion_linear[0, 0]))
        color = palette[idx % len(palette)]
        learned_sys = GbmSystem(mu=mu_hat, sigma=sigma_hat, x0=args.gbm_x0)
        theo = learned_sys.theoretical_moments(times)
        _write_moment_csv(theo, out / f"theoretical_{stem}.csv")
        mean_panel.curves.append(Curve(times, theo.mean[:, 0], stem, color))
        var_panel.curves.append(Curve(times, theo.variance[:, 0], "", color))
        emp = empirical_moments(simulate_ensemble(model, cfg, args.n_traj))
        _write_moment_csv(emp, out / f"empirical_{stem}.csv")
        mean_panel.curves.append(Curve(times, emp.mean[:, 0], "", color, dashed=True))
        var_panel.curves.append(Curve(times, emp.variance[:, 0], "", color, dashed=True))
        errors[f"empirical_{stem}"] = _moment_errors(theo_true, emp)
        errors[f"learned_params_{stem}"] = {"mu": mu_hat, "sigma": sigma_hat}

    with open(out / "errors.json", "w", encoding="utf-8") as fh:
        json.dump(errors, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.svg:
        write_svg([mean_panel, var_panel], out / "moments.svg")
    print(f"moment curves for {1 + len(args.models or [])} process(es), "
          f"{args.n_traj} paths each -> {out}")
    return 0


def _moment_errors(theoretical, empirical) -> dict:
    cmp_ = moment_comparison(theoretical, empirical)
    return {
        "mean_abs_error_final": float(cmp_.mean_abs_error[-1, 0]),
        "variance_abs_error_final": float(cmp_.variance_abs_error[-1, 0]),
        "mean_abs_error_max": cmp_.max_mean_abs_error(),
        "variance_abs_error_max": cmp_.max_variance_abs_error(),
    }


# ---------------------------------------------------------------- attractor


def _cmd_attractor(args) -> int:
    out = _out_dir(args, "attractor")
    out.mkdir(parents=True, exist_ok=True)
    reference = None
    if args.model:
        subject = load_model(args.model)
        subject_name = Path(args.model).stem
        if args.with_truth:
            reference = _sim_source(_system_from_args(args))
    else:
        subject = _sim_source(_system_from_args(args))
        subject_name = args.system
    x0 = _parse_state(args.x0)
    cfg = SimConfig(steps=args.steps, tau=args.tau, seed=args.seed,
                    initial_state=x0, burn_in=args.burn_in)
    traj = simulate(subject, cfg)
    write_trajectory_csv(traj, out / "trajectory.csv")
    verdict = attractor_topology(traj, margin=args.margin,
                                 min_fraction=args.min_fraction,
                                 min_crossings=args.min_crossings)
    with open(out / "verdict.json", "w", encoding="utf-8") as fh:
        json.dump(verdict.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.svg:
        panels = []
        if reference is not None:
            ref_traj = simulate(reference, cfg)
            panels.append(Panel(
                title="reference (x,z)", xlabel="x", ylabel="z",
                curves=[Curve(ref_traj.states[:, 0], ref_traj.states[:, 2],
                              color="#d62728")],
            ))
        panels.append(Panel(
            title=f"{subject_name} (x,z)", xlabel="x", ylabel="z",
            curves=[Curve(traj.states[:, 0], traj.states[:, 2], color="#2ca02c")],
        ))
        write_svg(panels, out / "attractor.svg")
    print(f"attractor of {subject_name}: both_lobes={verdict.both_lobes} "
          f"crossings={verdict.crossings} "
          f"lobe_fractions=({verdict.lobe_fractions[0]:.3f},{verdict.lobe_fractions[1]:.3f}) "
          f"-> {out}")
    return 0


# ---------------------------------------------------------------- gradmatch


def _cmd_gradmatch(args) -> int:
    if args.data:
        paths = [Path(args.data)]
    else:
        paths = sorted(Path(args.data_dir).glob("*.csv"))
        if not paths:
            raise FileNotFoundError(f"no .csv trajectories in {args.data_dir}")
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"data file not found: {p}")
    trajectories = [read_trajectory_csv(p) for p in paths]
    field = gradient_match(trajectories, neighbor_count=args.k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_field_csv(field, out)
    print(f"gradient matching on {len(trajectories)} trajectory(ies): "
          f"{field.n_anchors} anchors, k={field.neighbor_count} -> {out}")
    if args.simulate_steps:
        x0 = _parse_state(args.x0) if args.x0 else list(trajectories[0].states[0])
        cfg = SimConfig(steps=args.simulate_steps, tau=field.tau, seed=args.seed,
                        initial_state=x0, burn_in=args.burn_in)
        traj = simulate(field, cfg)
        sim_out = Path(args.sim_out) if args.sim_out else out.with_name(out.stem + "_sim.csv")
        write_trajectory_csv(traj, sim_out)
        qv = np.sum(np.diff(traj.states, axis=0) ** 2, axis=0)
        qv_txt = ",".join(f"{v:.6g}" for v in qv)
        print(f"simulated {args.simulate_steps} steps from field: "
              f"quadratic_variation=({qv_txt}) -> {sim_out}")
    return 0


# --------------------------------------------------------------- experiment


def _cmd_experiment(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        doc = json.load(fh)
    if args.runs is not None:
        doc["runs"] = args.runs
    spec = ExperimentSpec.from_dict(doc)
    out = Path(args.out) if args.out else (
        Path(spec.outputs) if spec.outputs
        else Path(os.environ.get("EMSDE_OUT_DIR", "emsde_out")) / spec.name
    )

    def progress(k, result):
        bits = [f"[{spec.name}] run {k + 1}/{spec.runs}"]
        for method, entry in result["methods"].items():
            if "rmse" in entry:
                bits.append(f"{method}: drift_rmse={entry['rmse']['drift_rmse']:.4g}")
            elif "n_anchors" in entry:
                bits.append(f"{method}: anchors={entry['n_anchors']}")
        print(" ".join(bits), flush=True)

    report = run_experiment(spec, out_dir=out, workers=args.workers, progress=progress)
    for method, blocks in report.get("rmse", {}).items():
        print(f"{method}: drift rmse mean={blocks['drift']['mean']:.6g} "
              f"var={blocks['drift']['variance']:.3g}; "
              f"diffusion rmse mean={blocks['diffusion']['mean']:.6g}")
    for method, top in report.get("topology", {}).items():
        print(f"{method}: both-lobes rate={top['pass_rate']:.2f}")
    print(f"report -> {out / 'report.json'}")
    return 0


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emsde",
        description="SDE drift/diffusion identification via the Euler-Maruyama "
                    "transition likelihood",
    )
    parser.add_argument("--backend", choices=["compiled", "numpy"],
                        help="force a kernel backend for this invocation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate trajectories")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--system", choices=["gbm", "slorenz"])
    group.add_argument("--model", help="model JSON file")
    _add_system_flags(p)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--tau", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-traj", type=int, default=1)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--x0", help="comma-separated initial state")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="fit a model to one trajectory")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["sde", "det"], default="sde")
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--variance-floor", type=float)
    p.add_argument("--affine", action="store_true",
                   help="learn a per-row diffusion bias")
    p.add_argument("--freeze-rows", help="diffusion rows pinned to zero, e.g. '0'")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="coefficient RMSE against a truth")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--truth-system", choices=["gbm", "slorenz"])
    p.add_argument("--truth-model")
    p.add_argument("--affine-truth", action="store_true")
    p.add_argument("--labels", help="comma-separated coefficient labels for statistics")
    _add_system_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("moments", help="moment curves for 1-D models (GBM)")
    p.add_argument("--models", nargs="*")
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--gbm-x0", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.001)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--n-traj", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=_cmd_moments)

    p = sub.add_parser("attractor", help="simulate and classify a 3-D attractor")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--system", choices=["slorenz"])
    _add_system_flags(p)
    p.add_argument("--with-truth", action="store_true",
                   help="add a reference panel simulated from the named system flags")
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--tau", type=float, default=0.001)
    p.add_argument("--burn-in", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", default="1,1,1")
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--min-fraction", type=float, default=0.10)
    p.add_argument("--min-crossings", type=int, default=5)
    p.add_argument("--out")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=_cmd_attractor)

    p = sub.add_parser("gradmatch", help="nonparametric estimation from trajectories")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--data", help="one trajectory CSV")
    group.add_argument("--data-dir", help="directory of aligned trajectory CSVs")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--simulate-steps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0")
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--sim-out")
    p.set_defaults(func=_cmd_gradmatch)

    p = sub.add_parser("experiment", help="run a JSON experiment recipe")
    p.add_argument("--spec", required=True)
    p.add_argument("--runs", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.backend:
        backends.set_active_backend(args.backend)
    try:
        return args.func(args)
    except (TrainingDivergedError, DivergenceError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, KeyError, json.JSONDecodeError, EmsdeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
