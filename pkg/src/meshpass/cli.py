"""Command-line entry point: gen / train / eval / analyze / bench.

Runs are configured by a plain-text key=value file plus ``--set`` overrides;
unknown keys are rejected. Every command writes only under its ``--out``
directory and is reproducible from (config, seed).
"""

from __future__ import annotations

import argparse
import os
import sys
from multiprocessing import Pool

import numpy as np

from . import analysis, dataset, solver, training
from .mesh import load_mesh
from .processor import ModelParams, parse_schedule
from .solver import FrameStepper, load_trajectory
from .training import ModelStepper, TrainConfig, evaluate, load_checkpoint, save_checkpoint


class ConfigError(ValueError):
    pass


# key -> (default, type, help)
CONFIG_DEFAULTS = {
    "scenarios": (10, int, "number of scenarios to generate"),
    "seed": (0, int, "global RNG seed"),
    "labels": ("native", str, "label mode: native | high-accuracy"),
    "refine": (4, int, "refinement factor for high-accuracy labels"),
    "edge_min_lo": (1e-3, float, "lower bound of the sampled minimum edge length"),
    "edge_min_hi": (1e-2, float, "upper bound of the sampled minimum edge length"),
    "viscosity": (1e-3, float, "scalar diffusivity (m^2/s)"),
    "dt": (0.01, float, "frame timestep (s)"),
    "n_steps": (200, int, "frames per trajectory"),
    "coarse_edge_min": (1e-2, float, "fixed coarse-level resolution"),
    "processor": ("p=1H 11L 1H (U=1,D=1)", str, "processor schedule string"),
    "latent_size": (128, int, "latent width"),
    "hidden_size": (128, int, "MLP hidden width"),
    "train_steps": (10000, int, "training steps"),
    "learning_rate": (1e-4, float, "initial learning rate"),
    "lr_decay": (0.1, float, "total learning-rate decay factor"),
    "batch_size": (1, int, "graphs per training step"),
    "noise_std": (0.02, float, "training noise std in normalized units"),
    "normalizer_steps": (300, int, "normalizer accumulation budget"),
    "eval_resolutions": ("", str, "comma-separated edge_min values for eval"),
    "n_resolutions": (5, int, "test resolutions when eval_resolutions is empty"),
    "eval_steps": (50, int, "frames in the evaluation reference trajectory"),
    "max_rollout": (50, int, "rollout length for MSE-N metrics"),
    "workers": (1, int, "per-scenario parallel workers (1 = deterministic)"),
}


def load_config(path=None, overrides=()):
    cfg = {k: v for k, (v, _, _) in CONFIG_DEFAULTS.items()}

    def apply(key, raw, where):
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"unknown config key {key!r} in {where}")
        _, typ, _ = CONFIG_DEFAULTS[key]
        try:
            cfg[key] = typ(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r} in {where}: {raw!r}") from exc

    if path:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"line {lineno} of {path} is not key=value")
                key, raw = line.split("=", 1)
                apply(key.strip(), raw.strip(), path)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        apply(key.strip(), raw.strip(), "--set")
    return cfg


def _gen_one(args):
    index, scenario, cfg = args
    fine, _, traj = dataset.simulate_scenario(
        scenario,
        viscosity=cfg["viscosity"],
        dt=cfg["dt"],
        n_steps=cfg["n_steps"],
        coarse_edge_min=cfg["coarse_edge_min"],
    )
    ha_traj = None
    if cfg["labels"] == "high-accuracy":
        _, _, ha_traj = dataset.high_accuracy_trajectory(
            scenario,
            cfg["refine"],
            viscosity=cfg["viscosity"],
            dt=cfg["dt"],
            n_steps=cfg["n_steps"],
            coarse_edge_min=cfg["coarse_edge_min"],
        )
    extra = {
        "viscosity": float(cfg["viscosity"]),
        "dt": float(cfg["dt"]),
        "n_steps": cfg["n_steps"],
        "coarse_edge_min": float(cfg["coarse_edge_min"]),
        "refinement": cfg["refine"] if ha_traj is not None else 1,
        "domain_length": float(dataset.CHANNEL_LENGTH),
        "domain_height": float(dataset.CHANNEL_HEIGHT),
    }
    return index, scenario, fine, traj, ha_traj, extra


def cmd_gen(args):
    cfg = load_config(args.config, args.set or ())
    if args.scenarios is not None:
        cfg["scenarios"] = args.scenarios
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.labels is not None:
        cfg["labels"] = args.labels
    if args.refine is not None:
        cfg["refine"] = args.refine
    if cfg["labels"] not in ("native", "high-accuracy"):
        raise ConfigError("labels must be 'native' or 'high-accuracy'")
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    scenarios = []
    for scenario in dataset.sample_scenarios(cfg["scenarios"], cfg["seed"]):
        # Re-sample edge_min within the configured (desk-scale) subrange.
        edge_min = float(
            np.exp(rng.uniform(np.log(cfg["edge_min_lo"]), np.log(cfg["edge_min_hi"])))
        )
        scenarios.append(
            dataset.ScenarioParams(
                scenario.radius, scenario.center, scenario.inflow_mean, edge_min,
                scenario.seed,
            )
        )
    jobs = [(i, s, cfg) for i, s in enumerate(scenarios)]
    if cfg["workers"] > 1:
        with Pool(cfg["workers"]) as pool:
            results = pool.map(_gen_one, jobs)
    else:
        results = [_gen_one(job) for job in jobs]
    for index, scenario, fine, traj, ha_traj, extra in sorted(results):
        dataset.write_scenario_dir(args.out, index, scenario, fine, traj, ha_traj, extra)
    with open(os.path.join(args.out, "dataset_meta"), "w") as fh:
        for key in sorted(cfg):
            value = repr(float(cfg[key])) if isinstance(cfg[key], float) else cfg[key]
            fh.write(f"{key}={value}\n")
    print(f"wrote {len(scenarios)} scenarios to {args.out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config, args.set or ())
    if args.processor is not None:
        cfg["processor"] = args.processor
    if args.steps is not None:
        cfg["train_steps"] = args.steps
    if args.seed is not None:
        cfg["seed"] = args.seed
    if not os.path.isdir(args.dataset):
        print(f"error: dataset directory not found: {args.dataset}", file=sys.stderr)
        return 1
    samples = dataset.load_dataset(args.dataset, coarse_edge_min=cfg["coarse_edge_min"])
    if not samples:
        print(f"error: no scenarios under {args.dataset}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    train_cfg = TrainConfig(
        steps=cfg["train_steps"],
        learning_rate=cfg["learning_rate"],
        lr_decay=cfg["lr_decay"],
        batch_size=cfg["batch_size"],
        noise_std=cfg["noise_std"],
        seed=cfg["seed"],
        schedule=cfg["processor"],
        normalizer_steps=min(cfg["normalizer_steps"], cfg["train_steps"]),
        latent_size=cfg["latent_size"],
        hidden_size=cfg["hidden_size"],
    )
    if args.resume:
        params, optimizer, start_step = load_checkpoint(args.resume)
    else:
        params = ModelParams(
            cfg["processor"],
            field_width=samples[0].inputs.shape[-1] if samples[0].inputs.ndim > 1 else 1,
            latent_size=cfg["latent_size"],
            hidden_size=cfg["hidden_size"],
            seed=cfg["seed"],
        )
        optimizer = None
        start_step = 0
    from . import nn

    if optimizer is None:
        optimizer = nn.Adam(params.parameters(), lr=train_cfg.learning_rate)
    history = training.train(params, samples, train_cfg, optimizer, start_step)
    ckpt = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(ckpt, params, optimizer, train_cfg.steps)
    training.write_history_csv(history, os.path.join(args.out, "history.csv"))
    print(f"trained {train_cfg.steps - start_step} steps; checkpoint at {ckpt}")
    return 0


def _eval_resolutions(cfg):
    if cfg["eval_resolutions"]:
        return sorted((float(v) for v in cfg["eval_resolutions"].split(",")), reverse=True)
    return None


def cmd_eval(args):
    cfg = load_config(args.config, args.set or ())
    if args.seed is not None:
        cfg["seed"] = args.seed
    os.makedirs(args.out, exist_ok=True)
    meshes, ref_traj, pde_cfg = dataset.fixed_obstacle_testset(
        resolutions=_eval_resolutions(cfg),
        n_resolutions=cfg["n_resolutions"],
        seed=cfg["seed"],
        viscosity=cfg["viscosity"],
        dt=cfg["dt"],
        n_steps=cfg["eval_steps"],
        edge_min_range=(cfg["edge_min_lo"], cfg["edge_min_hi"]),
    )
    if args.solver:
        factory = lambda mesh: FrameStepper(mesh, pde_cfg)
        report = evaluate(factory, meshes, ref_traj, model="solver", mps=0,
                          schedule="", max_rollout=cfg["max_rollout"])
    else:
        if not args.checkpoint:
            print("error: --checkpoint or --solver required", file=sys.stderr)
            return 1
        params, _, _ = load_checkpoint(args.checkpoint)
        coarse = dataset.generate_mesh(
            pde_cfg.domain, cfg["coarse_edge_min"], seed=cfg["seed"] + 1
        )

        def factory(mesh):
            return ModelStepper(params, coarse).bind(mesh)

        report = evaluate(
            factory, meshes, ref_traj, model="model",
            mps=params.schedule.total_mps, schedule=params.schedule.text,
            max_rollout=cfg["max_rollout"],
        )
    report.write_csv(os.path.join(args.out, "eval.csv"))
    report.write_rollout_csv(os.path.join(args.out, "rollout.csv"))
    print(f"wrote evaluation for {len(meshes)} resolutions to {args.out}")
    return 0


def cmd_analyze(args):
    os.makedirs(args.out, exist_ok=True)
    if args.mode == "spectrum":
        mesh = load_mesh(args.mesh)
        traj_a, _ = load_trajectory(args.traj, mesh)
        traj_b, _ = load_trajectory(args.ref, mesh)
        if traj_a.fields.shape != traj_b.fields.shape:
            print("error: trajectory shapes differ", file=sys.stderr)
            return 1
        basis = analysis.spectral_basis(analysis.graph_laplacian(mesh))
        frame = min(args.frame, traj_a.n_frames - 1)
        err = traj_a.fields[frame] - traj_b.fields[frame]
        spectrum = analysis.gft_spectrum(basis, err)
        analysis.write_spectrum_csv(os.path.join(args.out, "spectrum.csv"), basis, spectrum)
        print(f"wrote spectrum.csv (frame {frame}) to {args.out}")
        return 0
    if args.mode == "curve":
        import csv as _csv

        eval_rows = []
        with open(args.eval) as fh:
            for row in _csv.DictReader(fh):
                eval_rows.append(
                    training.EvalRow(
                        edge_min=float(row["edge_min"]), model=row["model"],
                        mps=int(row["mps"]), schedule=row["schedule"],
                        mse1=float(row["mse1"]), mse10=float(row["mse10"]),
                        mse50=float(row["mse50"]),
                        sec_per_step=float(row["sec_per_step"]),
                        next_step_mse=float(row["mse1"]),
                    )
                )
        baseline_rows = []
        with open(args.baseline) as fh:
            for row in _csv.DictReader(fh):
                baseline_rows.append({"edge_min": float(row["edge_min"]), "mse1": float(row["mse1"])})
        merged = analysis.convergence_curve(eval_rows, baseline_rows)
        analysis.write_curve_csv(os.path.join(args.out, "curve.csv"), merged)
        print(f"wrote curve.csv to {args.out}")
        return 0
    print(f"error: unknown analyze mode {args.mode}", file=sys.stderr)
    return 1


def cmd_bench(args):
    cfg = load_config(args.config, args.set or ())
    if args.processor is not None:
        cfg["processor"] = args.processor
    os.makedirs(args.out, exist_ok=True)
    resolutions = (
        [float(v) for v in args.resolutions.split(",")]
        if args.resolutions
        else [8e-3, 5e-3, 3.5e-3]
    )
    domain = dataset.ChannelDomain(
        dataset.CHANNEL_LENGTH, dataset.CHANNEL_HEIGHT,
        dataset.TEST_CENTER, dataset.TEST_RADIUS,
    )
    params = ModelParams(
        cfg["processor"], 1, cfg["latent_size"], cfg["hidden_size"], cfg["seed"]
    )
    rows = []
    for res in resolutions:
        fine = dataset.generate_mesh(domain, res, seed=cfg["seed"])
        coarse = dataset.generate_mesh(domain, cfg["coarse_edge_min"], seed=cfg["seed"] + 1)
        row = analysis.timing_benchmark(params, fine, coarse)
        row["edge_min"] = res
        rows.append(row)
    analysis.write_timing_csv(os.path.join(args.out, "timing.csv"), rows)
    print(f"wrote timing.csv for {len(rows)} resolutions to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="meshpass",
        description="Two-level message-passing simulator toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset of scenarios")
    p.add_argument("--out", required=True)
    p.add_argument("--scenarios", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--labels", choices=("native", "high-accuracy"))
    p.add_argument("--refine", type=int)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--processor")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the classical solver")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--solver", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="spectra and convergence curves")
    p.add_argument("--mode", choices=("spectrum", "curve"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mesh")
    p.add_argument("--traj")
    p.add_argument("--ref")
    p.add_argument("--frame", type=int, default=1)
    p.add_argument("--eval")
    p.add_argument("--baseline")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="wall-time per step kind across resolutions")
    p.add_argument("--out", required=True)
    p.add_argument("--processor")
    p.add_argument("--resolutions")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
