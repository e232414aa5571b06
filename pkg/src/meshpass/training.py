"""Next-step training loop, rollout, and error metrics.

Training minimizes the MSE of normalized per-node deltas on the fine graph,
with Gaussian noise (in normalized units) added to the input fields. The
per-step RNG stream is derived from (seed, step) so runs are bit-repeatable
and resumable. Evaluation interpolates a reference trajectory onto each
simulation mesh and measures next-step and rollout errors through the same
code path used by the classical-solver baseline.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .mesh import build_interpolator, apply_interpolator
from .processor import ModelParams, PRESCRIBED_KINDS, forward_normalized_delta
from .solver import Trajectory, one_step_errors
from .graphs import (
    as_field_matrix,
    containment_edges,
    directed_mesh_edges,
    relative_edge_features,
)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 10000
    learning_rate: float = 1e-4
    lr_decay: float = 0.1  # total multiplicative decay across the run
    batch_size: int = 1
    noise_std: float = 0.02  # in normalized units
    seed: int = 0
    schedule: str = "p=1H 11L 1H (U=1,D=1)"
    label_mode: str = "native"
    normalizer_steps: int = 300
    latent_size: int = 128
    hidden_size: int = 128

    def __post_init__(self):
        if self.steps <= 0 or self.learning_rate <= 0 or self.batch_size <= 0:
            raise ValueError("steps, learning_rate and batch_size must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.normalizer_steps > self.steps:
            raise ValueError("normalizer warm-up budget exceeds total steps")

    def lr_at(self, step):
        return self.learning_rate * self.lr_decay ** (step / self.steps)


def _edge_feature_batches(sample):
    """Raw edge features per graph kind for normalizer accumulation."""
    out = {}
    s, r = directed_mesh_edges(sample.fine_mesh)
    out["fine"] = relative_edge_features(sample.fine_mesh.positions, s, r)
    if sample.coarse_mesh is not None:
        s, r = directed_mesh_edges(sample.coarse_mesh)
        out["coarse"] = relative_edge_features(sample.coarse_mesh.positions, s, r)
        for kind, (a, b) in (
            ("down", (sample.fine_mesh, sample.coarse_mesh)),
            ("up", (sample.coarse_mesh, sample.fine_mesh)),
        ):
            s, r = containment_edges(a, b)
            d = a.positions[s] - b.positions[r]
            out[kind] = np.column_stack([d, np.hypot(d[:, 0], d[:, 1])])
    return out


def warm_up_normalizers(params, samples):
    """Accumulate feature statistics from a batch of samples."""
    for sample in samples:
        inputs = as_field_matrix(sample.inputs)
        targets = as_field_matrix(sample.targets)
        params.node_field_normalizer.accumulate(inputs)
        params.output_normalizer.accumulate(targets - inputs)
        for kind, feats in _edge_feature_batches(sample).items():
            params.edge_normalizers[kind].accumulate(feats)


def training_loss(params, sample, noisy_inputs=None):
    """Normalized next-step delta loss on the fine graph of one sample."""
    inputs = as_field_matrix(sample.inputs) if noisy_inputs is None else noisy_inputs
    targets = as_field_matrix(sample.targets)
    delta_n, _ = forward_normalized_delta(
        params, sample.fine_mesh, sample.coarse_mesh, inputs
    )
    target_n = params.output_normalizer.apply(targets - inputs)
    return nn.mean_sq(nn.sub(delta_n, target_n))


def train(params, samples, config, optimizer=None, start_step=0, stop_step=None,
          callback=None):
    """Train ``params`` in place on a list of samples; returns history rows.

    History rows are dicts (step, loss, lr, sec_per_step). Deterministic for
    fixed (config.seed, samples) in single-threaded mode; resuming from
    ``start_step`` with the same optimizer state reproduces an uninterrupted
    run because the RNG stream is derived per step. ``stop_step`` pauses a
    run early without changing the learning-rate schedule (which is tied to
    ``config.steps``).
    """
    if not samples:
        raise TrainingError("empty training set")
    if optimizer is None:
        optimizer = nn.Adam(params.parameters(), lr=config.learning_rate)
    plist = params.parameters()
    history = []
    for step in range(start_step, config.steps if stop_step is None else stop_step):
        rng = np.random.default_rng([config.seed, step])
        t0 = time.perf_counter()
        batch_idx = rng.integers(0, len(samples), size=config.batch_size)
        grads = None
        loss_total = 0.0
        for idx in batch_idx:
            sample = samples[int(idx)]
            inputs = as_field_matrix(sample.inputs)
            if step < config.normalizer_steps:
                warm_up_normalizers(params, [sample])
            noise = rng.normal(0.0, config.noise_std, size=inputs.shape)
            noisy = inputs + noise * params.node_field_normalizer.std
            loss = training_loss(params, sample, noisy_inputs=noisy)
            if not np.isfinite(loss.data):
                raise TrainingError(f"training diverged at step {step}")
            gs = nn.backward(loss, wrt=plist)
            grads = gs if grads is None else [a + b for a, b in zip(grads, gs)]
            loss_total += float(loss.data)
        if config.batch_size > 1:
            grads = [g / config.batch_size for g in grads]
        optimizer.step(grads, lr=config.lr_at(step))
        history.append(
            {
                "step": step,
                "loss": loss_total / config.batch_size,
                "lr": config.lr_at(step),
                "sec_per_step": time.perf_counter() - t0,
            }
        )
        if callback is not None:
            callback(step, history[-1])
    return history


def save_checkpoint(path, params, optimizer, step):
    blocks = {"train/step": np.asarray([float(step)])}
    params.save(path)  # writes params + normalizers + meta
    existing = nn.load_blocks(path)
    existing.update(blocks)
    for name, arr in optimizer.state().items():
        existing[f"opt/{name}"] = arr
    nn.save_blocks(path, existing)


def load_checkpoint(path):
    """Returns (params, optimizer, step); optimizer is bound to the params."""
    blocks = nn.load_blocks(path)
    params = ModelParams.load(path)
    optimizer = nn.Adam(params.parameters())
    opt_state = {
        name[len("opt/") :]: arr
        for name, arr in blocks.items()
        if name.startswith("opt/")
    }
    if opt_state:
        optimizer.load_state(opt_state)
    step = int(blocks.get("train/step", np.zeros(1))[0])
    return params, optimizer, step


class ModelStepper:
    """predict_step wrapped in the stepper interface used by evaluation."""

    def __init__(self, params, coarse_mesh):
        self.params = params
        self.coarse_mesh = coarse_mesh
        self.mesh = None

    def bind(self, mesh):
        self.mesh = mesh
        return self

    def step(self, u, bc_values=None):
        from .processor import predict_step

        return predict_step(
            self.mesh, self.coarse_mesh, u, self.params, boundary_values=bc_values
        )


def rollout(params, fine_mesh, coarse_mesh, initial, steps, dt=0.01):
    """Iterate predict_step; prescribed boundary values are reapplied from
    the initial state every step. Returns a Trajectory of steps+1 frames."""
    from .processor import predict_step

    initial = np.asarray(initial, dtype=np.float64)
    initial_mat = as_field_matrix(initial)
    frames = np.empty((steps + 1,) + initial_mat.shape)
    frames[0] = initial_mat
    for t in range(steps):
        frames[t + 1] = as_field_matrix(
            predict_step(
                fine_mesh,
                coarse_mesh,
                frames[t],
                params,
                boundary_values=initial_mat,
            )
        )
    return Trajectory(fine_mesh, frames, dt)


def rollout_errors(stepper, mesh, ref_traj, n_steps):
    """Per-step MSE of an unrolled prediction against the interpolated
    reference; entry t is the error after t steps (entry 0 is zero)."""
    corners, weights = build_interpolator(ref_traj.mesh, mesh.positions)
    ref = [
        apply_interpolator(corners, weights, ref_traj.fields[t, :, 0])
        for t in range(min(n_steps + 1, ref_traj.n_frames))
    ]
    errs = np.zeros(len(ref))
    u = ref[0]
    bc = ref[0]
    for t in range(1, len(ref)):
        u = stepper.step(u, bc)
        errs[t] = np.mean((u - ref[t]) ** 2)
    return errs


@dataclass
class EvalRow:
    edge_min: float
    model: str
    mps: int
    schedule: str
    mse1: float
    mse10: float
    mse50: float
    sec_per_step: float
    next_step_mse: float = np.nan  # mean over all test transitions
    rollout: np.ndarray = field(default=None, repr=False)


CSV_COLUMNS = ("edge_min", "model", "mps", "schedule", "mse1", "mse10", "mse50", "sec_per_step")


@dataclass
class EvalReport:
    rows: list

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in self.rows:
                writer.writerow(
                    [
                        repr(r.edge_min),
                        r.model,
                        r.mps,
                        r.schedule,
                        repr(r.mse1),
                        repr(r.mse10),
                        repr(r.mse50),
                        repr(r.sec_per_step),
                    ]
                )

    def write_rollout_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("edge_min", "step", "mse"))
            for r in self.rows:
                if r.rollout is None:
                    continue
                for t, e in enumerate(r.rollout):
                    writer.writerow([repr(r.edge_min), t, repr(float(e))])


def evaluate(stepper_for_mesh, meshes, ref_traj, model="model", mps=0, schedule="",
             sec_per_step=float("nan"), max_rollout=50):
    """Evaluate a stepper factory over test meshes against a reference.

    ``stepper_for_mesh(mesh)`` must return an object with
    ``step(u, bc_values)``. The next-step MSE averages one-step errors over
    every reference transition (the ground-truth-error protocol); MSE-N
    averages the first N rollout errors.
    """
    rows = []
    for mesh in meshes:
        stepper = stepper_for_mesh(mesh)
        errs_next = one_step_errors(mesh, stepper, ref_traj)
        roll = rollout_errors(stepper, mesh, ref_traj, max_rollout)

        def mse_n(n):
            n = min(n, len(roll) - 1)
            return float(roll[1 : n + 1].mean())

        rows.append(
            EvalRow(
                edge_min=mesh.edge_min,
                model=model,
                mps=mps,
                schedule=schedule,
                mse1=mse_n(1),
                mse10=mse_n(10),
                mse50=mse_n(50),
                sec_per_step=sec_per_step,
                next_step_mse=float(errs_next.mean()),
                rollout=roll,
            )
        )
    return EvalReport(rows)


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("step", "loss", "lr", "sec_per_step"))
        for row in history:
            writer.writerow(
                [row["step"], repr(row["loss"]), repr(row["lr"]), repr(row["sec_per_step"])]
            )
