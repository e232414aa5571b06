"""Scenario sampling, label construction, and dataset I/O tests."""

import numpy as np
import pytest
from scipy import stats

from meshpass import dataset as D
from meshpass import mesh as M
from meshpass import solver as S

TOY = dict(center=np.array([0.45, 0.5]), sigma0=0.08, viscosity=0.004,
           velocity=(0.3, 0.0))


def toy_initial_fn():
    return lambda pts: S.gaussian_solution(
        pts, 0.0, TOY["center"], TOY["sigma0"], TOY["viscosity"], TOY["velocity"]
    )


def small_scenario(edge_min=8e-3, seed=3):
    return D.ScenarioParams(0.05, (0.275, 0.25), 1.5, edge_min, seed)


class TestSampleScenarios:
    def test_draws_satisfy_invariants(self):
        for s in D.sample_scenarios(200, seed=0):
            assert s.validate()

    def test_fixed_seed_identical(self):
        a = D.sample_scenarios(20, seed=42)
        b = D.sample_scenarios(20, seed=42)
        assert a == b

    def test_different_seed_differs(self):
        assert D.sample_scenarios(5, seed=0) != D.sample_scenarios(5, seed=1)

    def test_edge_min_log_uniform_chi_squared(self):
        # Flat histogram in log space at the 5% significance level.
        draws = np.array([s.edge_min for s in D.sample_scenarios(10_000, seed=7)])
        logs = np.log(draws)
        k = 20
        counts, _ = np.histogram(logs, bins=k,
                                 range=(np.log(1e-3), np.log(1e-2)))
        expected = len(draws) / k
        chi2 = ((counts - expected) ** 2 / expected).sum()
        assert chi2 < stats.chi2.ppf(0.95, k - 1)


class TestNativeDataset:
    def test_pair_count_and_bit_exact_labels(self):
        scen = small_scenario()
        samples = D.make_native_dataset([scen], n_steps=6)
        assert len(samples) == 6
        fine, coarse, traj = D.simulate_scenario(scen, n_steps=6)
        for t, s in enumerate(samples):
            assert np.array_equal(s.inputs, traj.fields[t])
            assert np.array_equal(s.targets, traj.fields[t + 1])
            assert s.provenance == "native"

    def test_sample_shapes_consistent(self):
        samples = D.make_native_dataset([small_scenario()], n_steps=3)
        for s in samples:
            assert s.inputs.shape == (s.fine_mesh.n_nodes, 1)
            assert s.targets.shape == (s.fine_mesh.n_nodes, 1)
            assert np.all(np.isfinite(s.inputs))
            assert np.all(np.isfinite(s.targets))

    def test_split_deterministic(self):
        samples = D.make_native_dataset([small_scenario()], n_steps=10)
        tr1, va1 = D.split_samples(samples, 0.3, seed=5)
        tr2, va2 = D.split_samples(samples, 0.3, seed=5)
        assert [id(s) for s in tr1] == [id(s) for s in tr2]
        assert [id(s) for s in va1] == [id(s) for s in va2]
        assert len(va1) == 3


class TestHighAccuracyDataset:
    def test_refinement_below_two_rejected(self):
        with pytest.raises(ValueError):
            D.make_high_accuracy_dataset([small_scenario()], refinement=1, n_steps=2)

    def test_refinement_one_degenerates_to_native_resolution(self):
        # The pipeline accepts refinement=1: labels come from a same-
        # resolution (different realization) mesh.
        domain = M.ChannelDomain(1.0, 1.0)
        cfg = S.PdeConfig(domain, viscosity=TOY["viscosity"],
                          inflow_mean=TOY["velocity"][0], dt=0.01, n_steps=3)
        mesh, ref_mesh, traj = D.refined_label_trajectory(
            domain, cfg, 0.08, 1, seed=0, initial_fn=toy_initial_fn()
        )
        assert abs(ref_mesh.edge_min - mesh.edge_min) < 1e-12
        assert traj.n_frames == 4

    def test_linear_solution_interpolates_exactly(self):
        # P1 interpolation of a linear-in-space field is exact, so labels on
        # a linear solution match direct evaluation.
        domain = M.ChannelDomain(1.0, 1.0)
        fine = M.generate_mesh(domain, 0.05)
        coarse = M.generate_mesh(domain, 0.1)
        linear = 2.0 * fine.positions[:, 0] - 0.5 * fine.positions[:, 1]
        vals = M.interpolate_field(fine, linear, coarse.positions)
        direct = 2.0 * coarse.positions[:, 0] - 0.5 * coarse.positions[:, 1]
        np.testing.assert_allclose(vals, direct, atol=1e-12)

    def test_labels_closer_to_analytic_than_coarse_solver(self):
        # The premise of training on refined labels: at every step the
        # interpolated fine solution beats the coarse solver's own state.
        domain = M.ChannelDomain(1.0, 1.0)
        n_steps = 20
        cfg = S.PdeConfig(domain, viscosity=TOY["viscosity"],
                          inflow_mean=TOY["velocity"][0], dt=0.01,
                          n_steps=n_steps)
        edge_min = 0.05
        mesh, _, ha_traj = D.refined_label_trajectory(
            domain, cfg, edge_min, 4, seed=0, initial_fn=toy_initial_fn()
        )
        own_traj = S.simulate(mesh, cfg, toy_initial_fn()(mesh.positions))
        for t in range(1, n_steps + 1):
            exact = S.gaussian_solution(mesh.positions, t * cfg.dt, TOY["center"],
                                        TOY["sigma0"], TOY["viscosity"],
                                        TOY["velocity"])
            err_ha = np.sqrt(np.mean((ha_traj.fields[t, :, 0] - exact) ** 2))
            err_own = np.sqrt(np.mean((own_traj.fields[t, :, 0] - exact) ** 2))
            assert err_ha < err_own

    def test_provenance_tag(self):
        samples = D.make_high_accuracy_dataset([small_scenario(edge_min=9e-3)],
                                               refinement=2, n_steps=2)
        assert all(s.provenance == "high_accuracy" for s in samples)


class TestFixedObstacleTestset:
    def test_meshes_share_geometry_and_finest_is_reference(self):
        meshes, ref_traj, config = D.fixed_obstacle_testset(
            resolutions=[2e-2, 1.4e-2, 1e-2], n_steps=3
        )
        assert len(meshes) == 3
        assert S.mesh_digest(ref_traj.mesh) == S.mesh_digest(meshes[-1])
        for mesh in meshes:
            obs = mesh.node_kind == M.KIND_OBSTACLE
            r = np.hypot(mesh.positions[obs, 0] - D.TEST_CENTER[0],
                         mesh.positions[obs, 1] - D.TEST_CENTER[1])
            np.testing.assert_allclose(r, D.TEST_RADIUS, rtol=1e-9)
        assert config.inflow_mean == D.TEST_U_MEAN

    def test_node_count_grows_as_edge_min_shrinks(self):
        meshes, _, _ = D.fixed_obstacle_testset(
            resolutions=[2e-2, 1.2e-2, 8e-3], n_steps=1
        )
        counts = [m.n_nodes for m in meshes]
        assert counts == sorted(counts)

    def test_sampled_resolutions_in_range(self):
        meshes, _, _ = D.fixed_obstacle_testset(
            n_resolutions=3, seed=1, n_steps=1, edge_min_range=(8e-3, 1.5e-2)
        )
        for m in meshes:
            assert 8e-3 <= m.edge_min <= 1.5e-2


class TestDatasetIO:
    def test_scenario_dir_roundtrip(self, tmp_path):
        scen = small_scenario()
        fine, coarse, traj = D.simulate_scenario(scen, n_steps=4)
        D.write_scenario_dir(tmp_path, 0, scen, fine, traj)
        loaded_scen, mesh, loaded_traj, ha, meta = D.read_scenario_dir(
            tmp_path / "scenario_0000"
        )
        assert loaded_scen == scen
        assert np.array_equal(mesh.positions, fine.positions)
        assert np.array_equal(loaded_traj.fields, traj.fields)
        assert ha is None
        assert meta["provenance"] == "native"

    def test_write_is_byte_deterministic(self, tmp_path):
        scen = small_scenario()
        fine, coarse, traj = D.simulate_scenario(scen, n_steps=2)
        d1 = D.write_scenario_dir(tmp_path / "a", 0, scen, fine, traj)
        d2 = D.write_scenario_dir(tmp_path / "b", 0, scen, fine, traj)
        import os

        for name in ("mesh.msh", "trajectory.bin", "meta"):
            b1 = open(os.path.join(d1, name), "rb").read()
            b2 = open(os.path.join(d2, name), "rb").read()
            assert b1 == b2

    def test_load_dataset_builds_samples(self, tmp_path):
        scen = small_scenario()
        fine, coarse, traj = D.simulate_scenario(scen, n_steps=3)
        D.write_scenario_dir(tmp_path, 0, scen, fine, traj)
        samples = D.load_dataset(tmp_path)
        assert len(samples) == 3
        assert samples[0].fine_mesh.n_nodes == fine.n_nodes
        assert samples[0].coarse_mesh is not None
