"""Scenario sampling, trajectory generation, and label construction.

Scenario parameters follow the channel-flow distributions: obstacle radius
and center uniform, inflow magnitude uniform, and the minimum edge length
log-uniform. High-accuracy labels come from a simulation at
``edge_min / refinement`` interpolated onto the scenario's own mesh, so a
model trained on them learns fine-scale dynamics on a coarse mesh.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .mesh import (
    ChannelDomain,
    TriMesh,
    build_interpolator,
    apply_interpolator,
    generate_mesh,
    load_mesh,
    save_mesh,
)
from .solver import PdeConfig, Trajectory, load_trajectory, save_trajectory, simulate

# Channel geometry and scenario distributions (meters, m/s).
CHANNEL_LENGTH = 1.0
CHANNEL_HEIGHT = 0.4
RADIUS_RANGE = (0.02, 0.08)
CENTER_X_RANGE = (0.15, 0.4)
CENTER_Y_RANGE = (0.1, 0.3)
U_MEAN_RANGE = (0.2, 12.0)
EDGE_MIN_RANGE = (1e-3, 1e-2)
COARSE_EDGE_MIN = 1e-2

# Fixed-obstacle test scenario.
TEST_U_MEAN = 0.85
TEST_RADIUS = 0.05
TEST_CENTER = (0.275, 0.25)


@dataclass(frozen=True)
class ScenarioParams:
    radius: float
    center: tuple[float, float]
    inflow_mean: float
    edge_min: float
    seed: int

    def validate(self):
        lo, hi = RADIUS_RANGE
        if not lo <= self.radius <= hi:
            raise ValueError(f"radius {self.radius} outside {RADIUS_RANGE}")
        if not CENTER_X_RANGE[0] <= self.center[0] <= CENTER_X_RANGE[1]:
            raise ValueError("obstacle center x out of range")
        if not CENTER_Y_RANGE[0] <= self.center[1] <= CENTER_Y_RANGE[1]:
            raise ValueError("obstacle center y out of range")
        if not U_MEAN_RANGE[0] <= self.inflow_mean <= U_MEAN_RANGE[1]:
            raise ValueError("inflow magnitude out of range")
        if not EDGE_MIN_RANGE[0] <= self.edge_min <= EDGE_MIN_RANGE[1]:
            raise ValueError("edge_min out of range")
        return True

    def domain(self):
        return ChannelDomain(CHANNEL_LENGTH, CHANNEL_HEIGHT, self.center, self.radius)


def sample_scenarios(n, seed):
    """Draw n scenarios: R, C, U_mean uniform; edge_min log-uniform."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        radius = rng.uniform(*RADIUS_RANGE)
        cx = rng.uniform(*CENTER_X_RANGE)
        cy = rng.uniform(*CENTER_Y_RANGE)
        u_mean = rng.uniform(*U_MEAN_RANGE)
        edge_min = float(np.exp(rng.uniform(*np.log(EDGE_MIN_RANGE))))
        scen_seed = int(rng.integers(0, 2**31))
        out.append(ScenarioParams(radius, (cx, cy), u_mean, edge_min, scen_seed))
    return out


@dataclass
class Sample:
    """One next-step training pair on a scenario's fine mesh."""

    fine_mesh: TriMesh
    coarse_mesh: TriMesh | None
    inputs: np.ndarray
    targets: np.ndarray
    provenance: str  # 'native' | 'high_accuracy'
    scenario: ScenarioParams | None = None


def blob_initial(mesh_positions, rng, domain, n_blobs=2):
    """Seeded sum of Gaussian bumps placed in the upstream half."""
    u = np.zeros(mesh_positions.shape[0])
    for _ in range(n_blobs):
        cx = rng.uniform(0.08 * domain.length, 0.55 * domain.length)
        cy = rng.uniform(0.2 * domain.height, 0.8 * domain.height)
        sigma = rng.uniform(0.05, 0.12) * domain.height
        amp = rng.uniform(0.5, 1.5)
        d2 = (mesh_positions[:, 0] - cx) ** 2 + (mesh_positions[:, 1] - cy) ** 2
        u += amp * np.exp(-d2 / sigma**2)
    return u


def scenario_pde_config(scenario, viscosity=1e-3, dt=0.01, n_steps=200):
    return PdeConfig(
        scenario.domain(),
        viscosity=viscosity,
        inflow_mean=scenario.inflow_mean,
        dt=dt,
        n_steps=n_steps,
    )


def scenario_meshes(scenario, coarse_edge_min=COARSE_EDGE_MIN):
    """The scenario's fine mesh plus the fixed-resolution coarse mesh."""
    domain = scenario.domain()
    fine = generate_mesh(domain, scenario.edge_min, seed=scenario.seed)
    coarse = generate_mesh(domain, coarse_edge_min, seed=scenario.seed + 1)
    return fine, coarse


def simulate_scenario(scenario, viscosity=1e-3, dt=0.01, n_steps=200,
                      coarse_edge_min=COARSE_EDGE_MIN, edge_min=None):
    """Generate (fine_mesh, coarse_mesh, trajectory) for one scenario."""
    domain = scenario.domain()
    edge_min = scenario.edge_min if edge_min is None else edge_min
    fine = generate_mesh(domain, edge_min, seed=scenario.seed)
    coarse = generate_mesh(domain, coarse_edge_min, seed=scenario.seed + 1)
    config = scenario_pde_config(scenario, viscosity, dt, n_steps)
    rng = np.random.default_rng(scenario.seed)
    initial = blob_initial(fine.positions, rng, domain)
    traj = simulate(fine, config, initial)
    return fine, coarse, traj


def trajectory_to_samples(fine, coarse, traj, provenance, scenario=None):
    """Consecutive-frame pairs: one sample per transition (T per trajectory)."""
    return [
        Sample(fine, coarse, traj.fields[t], traj.fields[t + 1], provenance, scenario)
        for t in range(traj.n_frames - 1)
    ]


def make_native_dataset(scenarios, viscosity=1e-3, dt=0.01, n_steps=200,
                        coarse_edge_min=COARSE_EDGE_MIN):
    """Simulate each scenario at its own resolution; labels are the solver's
    own next states."""
    samples = []
    for scenario in scenarios:
        fine, coarse, traj = simulate_scenario(
            scenario, viscosity, dt, n_steps, coarse_edge_min
        )
        samples.extend(trajectory_to_samples(fine, coarse, traj, "native", scenario))
    return samples


def refined_label_trajectory(domain, config, edge_min, refinement, seed, initial_fn):
    """Simulate at edge_min/refinement and interpolate every frame onto the
    edge_min mesh. Returns (mesh, refined_mesh, interpolated Trajectory)."""
    if refinement < 1:
        raise ValueError("refinement must be >= 1")
    mesh = generate_mesh(domain, edge_min, seed=seed)
    ref_mesh = generate_mesh(domain, edge_min / refinement, seed=seed + 2)
    ref_traj = simulate(ref_mesh, config, initial_fn(ref_mesh.positions))
    corners, weights = build_interpolator(ref_mesh, mesh.positions)
    frames = np.stack(
        [
            apply_interpolator(corners, weights, ref_traj.fields[t, :, 0])
            for t in range(ref_traj.n_frames)
        ]
    )
    return mesh, ref_mesh, Trajectory(mesh, frames, config.dt)


def high_accuracy_trajectory(scenario, refinement, viscosity=1e-3, dt=0.01,
                             n_steps=200, coarse_edge_min=COARSE_EDGE_MIN):
    """Simulate at edge_min/refinement and interpolate every frame onto the
    scenario mesh. Returns (fine_mesh, coarse_mesh, interpolated Trajectory)."""
    domain = scenario.domain()
    coarse = generate_mesh(domain, coarse_edge_min, seed=scenario.seed + 1)
    config = scenario_pde_config(scenario, viscosity, dt, n_steps)
    rng = np.random.default_rng(scenario.seed)
    initial_fn = lambda pts: blob_initial(pts, rng, domain)
    mesh, _, traj = refined_label_trajectory(
        domain, config, scenario.edge_min, refinement, scenario.seed, initial_fn
    )
    return mesh, coarse, traj


def make_high_accuracy_dataset(scenarios, refinement=4, viscosity=1e-3, dt=0.01,
                               n_steps=200, coarse_edge_min=COARSE_EDGE_MIN):
    """Inputs and targets both come from the interpolated fine trajectory."""
    if refinement < 2:
        raise ValueError("high-accuracy labels need refinement >= 2")
    samples = []
    for scenario in scenarios:
        mesh, coarse, traj = high_accuracy_trajectory(
            scenario, refinement, viscosity, dt, n_steps, coarse_edge_min
        )
        samples.extend(
            trajectory_to_samples(mesh, coarse, traj, "high_accuracy", scenario)
        )
    return samples


def fixed_obstacle_testset(resolutions=None, n_resolutions=5, seed=0, viscosity=1e-3,
                           dt=0.01, n_steps=50, u_mean=TEST_U_MEAN,
                           edge_min_range=None):
    """One fixed scenario at several resolutions; the finest trajectory is
    the reference. ``resolutions`` may be given explicitly, otherwise they
    are drawn log-uniformly from ``edge_min_range`` (the desk-scale default
    range is documented in the CLI config defaults).

    Returns (meshes, ref_traj, config): simulation meshes sorted coarse to
    fine, excluding the reference mesh itself.
    """
    if resolutions is None:
        rng = np.random.default_rng(seed)
        lo, hi = edge_min_range if edge_min_range is not None else EDGE_MIN_RANGE
        resolutions = sorted(
            np.exp(rng.uniform(np.log(lo), np.log(hi), size=n_resolutions)),
            reverse=True,
        )
    resolutions = [float(r) for r in resolutions]
    if sorted(resolutions, reverse=True) != resolutions:
        raise ValueError("resolutions must be sorted descending")
    domain = ChannelDomain(CHANNEL_LENGTH, CHANNEL_HEIGHT, TEST_CENTER, TEST_RADIUS)
    config = PdeConfig(domain, viscosity=viscosity, inflow_mean=u_mean, dt=dt, n_steps=n_steps)
    meshes = [generate_mesh(domain, r, seed=seed) for r in resolutions]
    ref_mesh = meshes[-1]  # the finest trajectory is the designated reference
    rng = np.random.default_rng(seed)
    initial = blob_initial(ref_mesh.positions, rng, domain)
    ref_traj = simulate(ref_mesh, config, initial)
    return meshes, ref_traj, config


# ---------------------------------------------------------------------------
# On-disk dataset layout: scenario_<id>/{mesh.msh, trajectory.bin,
# labels_ha.bin, meta}
# ---------------------------------------------------------------------------


def _write_meta(path, entries):
    with open(path, "w") as fh:
        for key, value in entries.items():
            if isinstance(value, float):
                value = repr(float(value))
            fh.write(f"{key}={value}\n")


def _read_meta(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, value = line.split("=", 1)
                out[key] = value
    return out


def write_scenario_dir(root, index, scenario, mesh, traj, ha_traj=None, extra_meta=None):
    d = os.path.join(root, f"scenario_{index:04d}")
    os.makedirs(d, exist_ok=True)
    save_mesh(mesh, os.path.join(d, "mesh.msh"))
    save_trajectory(traj, os.path.join(d, "trajectory.bin"))
    meta = {
        "radius": float(scenario.radius),
        "center_x": float(scenario.center[0]),
        "center_y": float(scenario.center[1]),
        "inflow_mean": float(scenario.inflow_mean),
        "edge_min": float(scenario.edge_min),
        "seed": scenario.seed,
        "provenance": "native" if ha_traj is None else "high_accuracy",
    }
    if extra_meta:
        meta.update(extra_meta)
    if ha_traj is not None:
        save_trajectory(ha_traj, os.path.join(d, "labels_ha.bin"))
    _write_meta(os.path.join(d, "meta"), meta)
    return d


def read_scenario_dir(path):
    """Returns (scenario, mesh, trajectory, ha_trajectory_or_None, meta)."""
    meta = _read_meta(os.path.join(path, "meta"))
    scenario = ScenarioParams(
        radius=float(meta["radius"]),
        center=(float(meta["center_x"]), float(meta["center_y"])),
        inflow_mean=float(meta["inflow_mean"]),
        edge_min=float(meta["edge_min"]),
        seed=int(meta["seed"]),
    )
    mesh = load_mesh(os.path.join(path, "mesh.msh"))
    traj, _ = load_trajectory(os.path.join(path, "trajectory.bin"), mesh)
    ha = None
    ha_path = os.path.join(path, "labels_ha.bin")
    if os.path.exists(ha_path):
        ha, _ = load_trajectory(ha_path, mesh)
    return scenario, mesh, traj, ha, meta


def load_dataset(root, coarse_edge_min=COARSE_EDGE_MIN):
    """Rebuild training samples from a dataset directory.

    The coarse mesh is regenerated deterministically from the stored
    scenario parameters; high-accuracy labels are used when present.
    """
    samples = []
    names = sorted(
        n for n in os.listdir(root) if n.startswith("scenario_")
    )
    for name in names:
        scenario, mesh, traj, ha, _ = read_scenario_dir(os.path.join(root, name))
        coarse = generate_mesh(scenario.domain(), coarse_edge_min, seed=scenario.seed + 1)
        use = ha if ha is not None else traj
        provenance = "high_accuracy" if ha is not None else "native"
        samples.extend(trajectory_to_samples(mesh, coarse, use, provenance, scenario))
    return samples


def split_samples(samples, holdout_fraction, seed):
    """Seed-deterministic shuffled train/validation split."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_holdout = int(round(holdout_fraction * len(samples)))
    val_idx = set(order[:n_holdout].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val
