"""Schedule grammar, update operators, and predict_step tests."""

import numpy as np
import pytest

from meshpass import graphs as G
from meshpass import mesh as M
from meshpass import nn
from meshpass import processor as P


@pytest.fixture(scope="module")
def channel():
    domain = M.ChannelDomain(1.0, 0.4, (0.275, 0.25), 0.05)
    fine = M.generate_mesh(domain, 8e-3)
    coarse = M.generate_mesh(domain, 2.5e-2)
    return domain, fine, coarse


class TestScheduleParsing:
    def test_single_v_cycle_15_steps(self):
        s = P.parse_schedule("p=1H 11L 1H (U=1,D=1)")
        assert s.total_mps == 15
        assert s.steps == ("H", "D") + ("L",) * 11 + ("U", "H")
        assert (s.u_count, s.d_count) == (1, 1)

    def test_two_v_cycles_25_steps(self):
        s = P.parse_schedule("p=3H 6L 3H 6L 3H (U=2, D=2)")
        assert s.total_mps == 25
        assert s.u_count == 2 and s.d_count == 2

    def test_pure_fine_schedule(self):
        s = P.parse_schedule("p=15H (U=0,D=0)")
        assert s.total_mps == 15
        assert s.steps == ("H",) * 15

    @pytest.mark.parametrize(
        "bad",
        [
            "1H 2L 1H (U=1,D=1)",        # missing p=
            "p=1H 2L 1H",                # missing counts
            "p=1H 2L 1H (U=2,D=1)",      # inconsistent U
            "p=1H 2L 1H (U=1,D=0)",      # inconsistent D
            "p=0H 2L 1H (U=1,D=1)",      # zero-length run
            "p=1X (U=0,D=0)",            # unknown letter
        ],
    )
    def test_malformed_rejected(self, bad):
        with pytest.raises(P.ScheduleError):
            P.parse_schedule(bad)

    def test_must_begin_and_end_with_fine(self):
        with pytest.raises(P.ScheduleError):
            P.parse_schedule("p=2L 1H (U=1,D=0)")
        with pytest.raises(P.ScheduleError):
            P.parse_schedule("p=1H 2L (U=0,D=1)")

    def test_counts_include_transfers(self):
        s = P.parse_schedule("p=2H 3L 2H (U=1,D=1)")
        assert s.total_mps == 2 + 1 + 3 + 1 + 2


def tiny_graph(latents, senders, receivers, edge_latents):
    return G.EncodedGraph(
        "fine", latents.shape[0], np.asarray(senders), np.asarray(receivers),
        nn.Tensor(latents), nn.Tensor(edge_latents),
    )


class TestGraphUpdates:
    def test_zero_weight_block_is_identity(self):
        rng = np.random.default_rng(0)
        block = P.ProcessorBlock("H", 4, 4, rng).zero_()
        g = tiny_graph(rng.normal(size=(3, 4)), [0, 1], [1, 2], rng.normal(size=(2, 4)))
        out = P.high_res_update(g, block)
        np.testing.assert_array_equal(out.node_latents.data, g.node_latents.data)
        np.testing.assert_array_equal(out.edge_latents.data, g.edge_latents.data)

    def test_node_without_incoming_edges_aggregates_zero(self):
        rng = np.random.default_rng(1)
        block = P.ProcessorBlock("H", 4, 4, rng)
        v = rng.normal(size=(3, 4))
        e = rng.normal(size=(1, 4))
        g = tiny_graph(v, [0], [1], e)  # node 2 receives nothing
        out = P.high_res_update(g, block)
        # manual: v2' = v2 + node_mlp([v2, zeros])
        manual = v[2] + block.node_mlp(
            nn.Tensor(np.concatenate([v[2], np.zeros(4)])[None])
        ).data[0]
        np.testing.assert_allclose(out.node_latents.data[2], manual, atol=1e-12)

    def test_permuted_edge_storage_bit_identical(self):
        rng = np.random.default_rng(2)
        block = P.ProcessorBlock("H", 4, 4, rng)
        v = rng.normal(size=(5, 4))
        senders = np.array([0, 1, 2, 3, 4, 0])
        receivers = np.array([1, 2, 3, 4, 0, 2])
        e = rng.normal(size=(6, 4))
        g1 = tiny_graph(v, senders, receivers, e)
        perm = np.array([5, 2, 0, 4, 1, 3])
        g2 = tiny_graph(v, senders[perm], receivers[perm], e[perm])
        o1 = P.high_res_update(g1, block)
        o2 = P.high_res_update(g2, block)
        assert np.array_equal(o1.node_latents.data, o2.node_latents.data)
        assert np.array_equal(
            o1.edge_latents.data[np.lexsort((o1.senders, o1.receivers))],
            o2.edge_latents.data[np.lexsort((o2.senders, o2.receivers))],
        )

    def test_low_res_update_one_hop_jacobian(self):
        # One coarse update propagates influence exactly one graph hop.
        rng = np.random.default_rng(3)
        block = P.ProcessorBlock("L", 16, 16, rng)
        # path graph 0-1-2-3 (directed both ways)
        senders = np.array([0, 1, 1, 2, 2, 3])
        receivers = np.array([1, 0, 2, 1, 3, 2])
        v_leaf = nn.Tensor(rng.normal(size=(4, 16)))
        g = G.EncodedGraph("coarse", 4, senders, receivers, v_leaf,
                           nn.Tensor(rng.normal(size=(6, 16))))
        out = P.low_res_update(g, block)
        adjacency = {0: {0, 1}, 1: {0, 1, 2}, 2: {1, 2, 3}, 3: {2, 3}}
        seed_rng = np.random.default_rng(99)
        for i in range(4):
            seed = np.zeros((4, 16))
            seed[i] = seed_rng.normal(size=16)
            (grad,) = nn.backward(out.node_latents, seed=seed, wrt=[v_leaf])
            influencing = set(np.nonzero(np.any(grad != 0, axis=1))[0].tolist())
            assert influencing <= adjacency[i]
            assert i in influencing

    def test_downsample_touches_only_coarse(self):
        rng = np.random.default_rng(4)
        block = P.ProcessorBlock("D", 4, 4, rng)
        fine = tiny_graph(rng.normal(size=(3, 4)), [0, 1], [1, 0], rng.normal(size=(2, 4)))
        coarse = G.EncodedGraph("coarse", 2, np.array([0, 1]), np.array([1, 0]),
                                nn.Tensor(rng.normal(size=(2, 4))),
                                nn.Tensor(rng.normal(size=(2, 4))))
        transfer = G.TransferGraph("down", 3, 2, np.array([0, 1, 2]),
                                   np.array([0, 0, 1]), nn.Tensor(rng.normal(size=(3, 4))))
        new_coarse, new_transfer = P.downsample_update(fine, coarse, transfer, block)
        assert new_coarse is not coarse
        assert not np.array_equal(new_coarse.node_latents.data, coarse.node_latents.data)
        assert not np.array_equal(new_transfer.edge_latents.data, transfer.edge_latents.data)
        # fine latents untouched by construction: same tensor object
        assert fine.node_latents is fine.node_latents

    def test_downsample_jacobian_respects_transfer_edges(self):
        rng = np.random.default_rng(5)
        block = P.ProcessorBlock("D", 16, 16, rng)
        v_fine = nn.Tensor(rng.normal(size=(3, 16)))
        fine = G.EncodedGraph("fine", 3, np.array([0]), np.array([1]),
                              v_fine, nn.Tensor(rng.normal(size=(1, 16))))
        coarse = G.EncodedGraph("coarse", 2, np.array([0, 1]), np.array([1, 0]),
                                nn.Tensor(rng.normal(size=(2, 16))),
                                nn.Tensor(rng.normal(size=(2, 16))))
        # fine 0 and 1 -> coarse 0; fine 2 -> coarse 1
        transfer = G.TransferGraph("down", 3, 2, np.array([0, 1, 2]),
                                   np.array([0, 0, 1]), nn.Tensor(rng.normal(size=(3, 16))))
        new_coarse, _ = P.downsample_update(fine, coarse, transfer, block)
        influence = {0: {0, 1}, 1: {2}}
        seed_rng = np.random.default_rng(98)
        for j in range(2):
            seed = np.zeros((2, 16))
            seed[j] = seed_rng.normal(size=16)
            (grad,) = nn.backward(new_coarse.node_latents, seed=seed, wrt=[v_fine])
            got = set(np.nonzero(np.any(grad != 0, axis=1))[0].tolist())
            assert got == influence[j]

    def test_coarse_node_without_transfer_edges_aggregates_zero(self):
        rng = np.random.default_rng(6)
        block = P.ProcessorBlock("D", 4, 4, rng)
        fine = tiny_graph(rng.normal(size=(2, 4)), [0], [1], rng.normal(size=(1, 4)))
        v_coarse = rng.normal(size=(2, 4))
        coarse = G.EncodedGraph("coarse", 2, np.array([0]), np.array([1]),
                                nn.Tensor(v_coarse), nn.Tensor(rng.normal(size=(1, 4))))
        transfer = G.TransferGraph("down", 2, 2, np.array([0, 1]),
                                   np.array([0, 0]), nn.Tensor(rng.normal(size=(2, 4))))
        new_coarse, _ = P.downsample_update(fine, coarse, transfer, block)
        manual = v_coarse[1] + block.node_mlp(
            nn.Tensor(np.concatenate([v_coarse[1], np.zeros(4)])[None])
        ).data[0]
        np.testing.assert_allclose(new_coarse.node_latents.data[1], manual, atol=1e-12)

    def test_upsample_mirrors_downsample(self):
        rng = np.random.default_rng(7)
        block = P.ProcessorBlock("U", 16, 16, rng)
        v_fine = nn.Tensor(rng.normal(size=(3, 16)))
        fine = G.EncodedGraph("fine", 3, np.array([0]), np.array([1]),
                              v_fine, nn.Tensor(rng.normal(size=(1, 16))))
        v_coarse = nn.Tensor(rng.normal(size=(2, 16)))
        coarse = G.EncodedGraph("coarse", 2, np.array([0, 1]), np.array([1, 0]),
                                v_coarse, nn.Tensor(rng.normal(size=(2, 16))))
        transfer = G.TransferGraph("up", 2, 3, np.array([0, 0, 1]),
                                   np.array([0, 1, 2]), nn.Tensor(rng.normal(size=(3, 16))))
        new_fine, new_transfer = P.upsample_update(coarse, fine, transfer, block)
        assert not np.array_equal(new_fine.node_latents.data, fine.node_latents.data)
        # coarse -> fine influence only along transfer edges
        influence = {0: {0}, 1: {0}, 2: {1}}
        seed_rng = np.random.default_rng(97)
        for j in range(3):
            seed = np.zeros((3, 16))
            seed[j] = seed_rng.normal(size=16)
            (grad,) = nn.backward(new_fine.node_latents, seed=seed, wrt=[v_coarse])
            got = set(np.nonzero(np.any(grad != 0, axis=1))[0].tolist())
            assert got == influence[j]


class TestModelParams:
    def test_one_block_per_step_no_sharing(self):
        params = P.ModelParams("p=2H 2L 2H (U=1,D=1)", 1, 8, 8, seed=0)
        assert len(params.blocks) == 8
        ids = {id(b.edge_mlp) for b in params.blocks}
        assert len(ids) == 8
        w0 = params.blocks[0].edge_mlp.weights[0].data
        w1 = params.blocks[1].edge_mlp.weights[0].data
        assert not np.array_equal(w0, w1)

    def test_save_load_roundtrip(self, tmp_path):
        params = P.ModelParams("p=1H 2L 1H (U=1,D=1)", 2, 8, 8, seed=3)
        params.node_field_normalizer.accumulate(np.random.default_rng(0).normal(size=(10, 2)))
        path = tmp_path / "params.bin"
        params.save(path)
        loaded = P.ModelParams.load(path)
        assert loaded.schedule == params.schedule
        assert loaded.field_width == 2
        for (na, a), (nb, b) in zip(
            params.named_parameters().items(), loaded.named_parameters().items()
        ):
            assert na == nb
            assert np.array_equal(a.data, b.data)
        np.testing.assert_array_equal(
            loaded.node_field_normalizer.mean, params.node_field_normalizer.mean
        )


class TestPredictStep:
    def test_zero_weight_model_identity(self, channel):
        _, fine, coarse = channel
        params = P.ModelParams("p=1H 2L 1H (U=1,D=1)", 1, 8, 8, seed=0).zero_()
        fields = np.random.default_rng(0).normal(size=fine.n_nodes)
        out = P.predict_step(fine, coarse, fields, params)
        interior = fine.node_kind == M.KIND_INTERIOR
        assert np.abs(out[interior] - fields[interior]).max() <= 1e-15

    def test_output_changes_with_nonzero_params(self, channel):
        _, fine, coarse = channel
        params = P.ModelParams("p=1H 2L 1H (U=1,D=1)", 1, 8, 8, seed=0)
        fields = np.random.default_rng(0).normal(size=fine.n_nodes)
        out = P.predict_step(fine, coarse, fields, params)
        assert np.abs(out - fields).max() > 0

    def test_prescribed_nodes_keep_boundary_values(self, channel):
        _, fine, coarse = channel
        params = P.ModelParams("p=1H 1L 1H (U=1,D=1)", 1, 8, 8, seed=1)
        fields = np.random.default_rng(1).normal(size=fine.n_nodes)
        bc = np.random.default_rng(2).normal(size=fine.n_nodes)
        out = P.predict_step(fine, coarse, fields, params, boundary_values=bc)
        mask = np.isin(fine.node_kind, P.PRESCRIBED_KINDS)
        np.testing.assert_array_equal(out[mask], bc[mask])

    def test_schedule_argument_must_match_params(self, channel):
        _, fine, coarse = channel
        params = P.ModelParams("p=1H 1L 1H (U=1,D=1)", 1, 8, 8, seed=0)
        with pytest.raises(P.ScheduleError):
            P.predict_step(fine, coarse, np.zeros(fine.n_nodes), params,
                           schedule="p=2H (U=0,D=0)")
        out = P.predict_step(fine, coarse, np.zeros(fine.n_nodes), params,
                             schedule="p=1H 1L 1H (U=1,D=1)")
        assert out.shape == (fine.n_nodes,)

    def test_translation_invariance(self, channel):
        _, fine, coarse = channel
        params = P.ModelParams("p=1H 1L 1H (U=1,D=1)", 1, 8, 8, seed=0)
        fields = np.random.default_rng(3).normal(size=fine.n_nodes)
        out = P.predict_step(fine, coarse, fields, params)
        shift = np.array([0.3, -0.1])
        fine_t = M.TriMesh(fine.positions + shift, fine.triangles, fine.node_kind,
                           fine.edge_min, fine.edge_max)
        coarse_t = M.TriMesh(coarse.positions + shift, coarse.triangles,
                             coarse.node_kind, coarse.edge_min, coarse.edge_max)
        out_t = P.predict_step(fine_t, coarse_t, fields, params)
        np.testing.assert_allclose(out_t, out, atol=1e-12)

    def test_pure_fine_schedule_needs_no_coarse(self, channel):
        _, fine, _ = channel
        params = P.ModelParams("p=2H (U=0,D=0)", 1, 8, 8, seed=0)
        out = P.predict_step(fine, None, np.zeros(fine.n_nodes), params)
        assert out.shape == (fine.n_nodes,)

    def test_du_schedule_requires_coarse(self, channel):
        _, fine, _ = channel
        params = P.ModelParams("p=1H 1L 1H (U=1,D=1)", 1, 8, 8, seed=0)
        with pytest.raises(ValueError):
            P.predict_step(fine, None, np.zeros(fine.n_nodes), params)


@pytest.fixture(scope="module")
def small_pair():
    domain = M.ChannelDomain(1.0, 0.25)
    fine = M.generate_mesh(domain, 0.05)   # elongated: large hop diameter
    coarse = M.generate_mesh(domain, 0.25)
    return domain, fine, coarse


class TestReceptiveField:
    """Jacobian sparsity of the full encode-process-decode map."""

    def test_single_fine_step_influence_within_bound(self, small_pair):
        from meshpass.analysis import fine_graph_distances, receptive_field

        _, fine, coarse = small_pair
        params = P.ModelParams("p=1H (U=0,D=0)", 1, 8, 8, seed=0)
        mask = receptive_field(params, fine, coarse)
        dist = fine_graph_distances(fine)
        n = 1
        assert not np.any(mask & (dist > n + 1))

    def test_vcycle_reaches_beyond_fine_budget(self, small_pair):
        from meshpass.analysis import fine_graph_distances, receptive_field

        _, fine, coarse = small_pair
        params = P.ModelParams("p=1H 2L 1H (U=1,D=1)", 1, 8, 8, seed=0)
        mask = receptive_field(params, fine, coarse)
        dist = fine_graph_distances(fine)
        fine_budget = 2  # H steps only
        assert np.any(mask & (dist > fine_budget + 1))


class TestScheduleFormat:
    def test_roundtrip_text(self):
        for text in ("p=1H 11L 1H (U=1,D=1)", "p=15H (U=0,D=0)"):
            s = P.parse_schedule(text)
            s2 = P.parse_schedule(s._format())
            assert s2.steps == s.steps
