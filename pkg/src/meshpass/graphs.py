"""Latent graph construction: per-level encoding and cross-level transfers.

Raw edge features follow the canonical layout [dx, dy, norm] with
dx = x_sender - x_receiver. Mesh edges are stored as two directed edges in
a fixed order (sorted by receiver, then sender) so aggregation is
bit-deterministic and independent of input edge permutations.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import nn
from .mesh import KIND_OBSTACLE, NODE_KINDS, locate_point

ONE_HOT_WIDTH = len(NODE_KINDS)


def one_hot_kinds(kinds):
    return np.eye(ONE_HOT_WIDTH)[np.asarray(kinds, dtype=np.int64)]


def as_field_matrix(fields):
    fields = np.asarray(fields, dtype=np.float64)
    return fields[:, None] if fields.ndim == 1 else fields


def _canonical(senders, receivers):
    order = np.lexsort((senders, receivers))
    return senders[order], receivers[order]


def directed_mesh_edges(mesh):
    """Both orientations of every mesh edge, in canonical order."""
    if "directed_edges" not in mesh._cache:
        und = mesh.undirected_edges()
        senders = np.concatenate([und[:, 0], und[:, 1]])
        receivers = np.concatenate([und[:, 1], und[:, 0]])
        mesh._cache["directed_edges"] = _canonical(senders, receivers)
    return mesh._cache["directed_edges"]


def relative_edge_features(positions, senders, receivers):
    d = positions[senders] - positions[receivers]
    return np.column_stack([d, np.hypot(d[:, 0], d[:, 1])])


def _graph_ops(senders, receivers, n_nodes, cache=None, key=None):
    if cache is not None and key in cache:
        return cache[key]
    ops = (
        nn.SparseOp.gather(senders, n_nodes),
        nn.SparseOp.gather(receivers, n_nodes),
        nn.SparseOp.segment_sum(receivers, n_nodes),
    )
    if cache is not None:
        cache[key] = ops
    return ops


def _canonicalize_edges(senders, receivers, edge_latents):
    """Sort edges by (receiver, sender) so aggregation order is storage-
    independent; no-op when already canonical."""
    senders = np.asarray(senders, dtype=np.int64)
    receivers = np.asarray(receivers, dtype=np.int64)
    order = np.lexsort((senders, receivers))
    if np.array_equal(order, np.arange(order.size)):
        return senders, receivers, edge_latents
    if isinstance(edge_latents, nn.Tensor):
        edge_latents = nn.take_rows(edge_latents, order)
    else:
        edge_latents = np.asarray(edge_latents)[order]
    return senders[order], receivers[order], edge_latents


class EncodedGraph:
    """One level's latent graph: node/edge latents plus directed topology."""

    def __init__(self, level, n_nodes, senders, receivers, node_latents, edge_latents, ops=None):
        self.level = level
        self.n_nodes = n_nodes
        senders, receivers, edge_latents = _canonicalize_edges(
            senders, receivers, edge_latents
        )
        self.senders = senders
        self.receivers = receivers
        self.node_latents = node_latents
        self.edge_latents = edge_latents
        if ops is None:
            ops = _graph_ops(senders, receivers, n_nodes)
        self.gather_send, self.gather_recv, self.aggregate = ops

    def replace(self, node_latents=None, edge_latents=None):
        out = object.__new__(EncodedGraph)
        out.level = self.level
        out.n_nodes = self.n_nodes
        out.senders = self.senders
        out.receivers = self.receivers
        out.node_latents = self.node_latents if node_latents is None else node_latents
        out.edge_latents = self.edge_latents if edge_latents is None else edge_latents
        out.gather_send = self.gather_send
        out.gather_recv = self.gather_recv
        out.aggregate = self.aggregate
        return out


class TransferGraph:
    """Directed cross-level edges (down: fine->coarse, up: coarse->fine)."""

    def __init__(self, direction, n_src, n_dst, senders, receivers, edge_latents, ops=None):
        if direction not in ("down", "up"):
            raise ValueError(f"unknown transfer direction {direction!r}")
        self.direction = direction
        self.n_src = n_src
        self.n_dst = n_dst
        senders, receivers, edge_latents = _canonicalize_edges(
            senders, receivers, edge_latents
        )
        self.senders = senders
        self.receivers = receivers
        self.edge_latents = edge_latents
        if ops is None:
            ops = (
                nn.SparseOp.gather(senders, n_src),
                nn.SparseOp.gather(receivers, n_dst),
                nn.SparseOp.segment_sum(receivers, n_dst),
            )
        self.gather_send, self.gather_recv, self.aggregate = ops

    def replace(self, edge_latents):
        out = object.__new__(TransferGraph)
        out.direction = self.direction
        out.n_src = self.n_src
        out.n_dst = self.n_dst
        out.senders = self.senders
        out.receivers = self.receivers
        out.edge_latents = edge_latents
        out.gather_send = self.gather_send
        out.gather_recv = self.gather_recv
        out.aggregate = self.aggregate
        return out


def encode_fine(mesh, fields, params):
    """Encode the simulation mesh and its (normalized) fields.

    Node features are the node-kind one-hot concatenated with the field
    channels; edge features are relative sender-receiver coordinates plus
    their norm. ``fields`` may be a Tensor (differentiable path) or an
    array.
    """
    fields_t = fields if isinstance(fields, nn.Tensor) else nn.Tensor(as_field_matrix(fields))
    if fields_t.data.shape[0] != mesh.n_nodes:
        raise ValueError(
            f"field rows {fields_t.data.shape[0]} != mesh node count {mesh.n_nodes}"
        )
    senders, receivers = directed_mesh_edges(mesh)
    ops = _graph_ops(senders, receivers, mesh.n_nodes, mesh._cache, "graph_ops")
    node_feats = nn.concat([one_hot_kinds(mesh.node_kind), fields_t])
    edge_feats = params.edge_normalizers["fine"].apply(
        relative_edge_features(mesh.positions, senders, receivers)
    )
    return EncodedGraph(
        "fine",
        mesh.n_nodes,
        senders,
        receivers,
        params.fine_node_encoder(node_feats),
        nn.mlp_apply(params.fine_edge_encoder, edge_feats),
        ops=ops,
    )


def encode_coarse(mesh, params):
    """Encode the auxiliary coarse level: geometric features only."""
    senders, receivers = directed_mesh_edges(mesh)
    ops = _graph_ops(senders, receivers, mesh.n_nodes, mesh._cache, "graph_ops")
    node_feats = one_hot_kinds(mesh.node_kind)
    edge_feats = params.edge_normalizers["coarse"].apply(
        relative_edge_features(mesh.positions, senders, receivers)
    )
    return EncodedGraph(
        "coarse",
        mesh.n_nodes,
        senders,
        receivers,
        nn.mlp_apply(params.coarse_node_encoder, node_feats),
        nn.mlp_apply(params.coarse_edge_encoder, edge_feats),
        ops=ops,
    )


def containment_edges(src_mesh, dst_mesh):
    """For each source node, edges to the 3 corners of its containing
    destination triangle (cached on the source mesh)."""
    key = ("containment", id(dst_mesh))
    if key not in src_mesh._cache:
        n = src_mesh.n_nodes
        senders = np.repeat(np.arange(n, dtype=np.int64), 3)
        receivers = np.empty(3 * n, dtype=np.int64)
        for i, p in enumerate(src_mesh.positions):
            loc = locate_point(dst_mesh, p)
            receivers[3 * i : 3 * i + 3] = dst_mesh.triangles[loc.triangle_index]
        order = np.lexsort((senders, receivers))
        # Hold dst_mesh so the id key cannot be recycled while cached.
        src_mesh._cache[key] = (dst_mesh, senders[order], receivers[order])
    _, senders, receivers = src_mesh._cache[key]
    return senders, receivers


def build_transfer(src_mesh, dst_mesh, direction, params):
    """Transfer graph connecting each source node to the corners of the
    destination triangle that contains it (3 edges per source node)."""
    senders, receivers = containment_edges(src_mesh, dst_mesh)
    ops_key = ("transfer_ops", id(dst_mesh))
    if ops_key not in src_mesh._cache:
        src_mesh._cache[ops_key] = (
            nn.SparseOp.gather(senders, src_mesh.n_nodes),
            nn.SparseOp.gather(receivers, dst_mesh.n_nodes),
            nn.SparseOp.segment_sum(receivers, dst_mesh.n_nodes),
        )
    d = src_mesh.positions[senders] - dst_mesh.positions[receivers]
    feats = np.column_stack([d, np.hypot(d[:, 0], d[:, 1])])
    encoder = params.down_edge_encoder if direction == "down" else params.up_edge_encoder
    feats = params.edge_normalizers[direction].apply(feats)
    return TransferGraph(
        direction,
        src_mesh.n_nodes,
        dst_mesh.n_nodes,
        senders,
        receivers,
        nn.mlp_apply(encoder, feats),
        ops=src_mesh._cache[ops_key],
    )


class GridLevel:
    """Uniform-grid coarse level; duck-types the mesh surface the coarse
    encoder needs (positions, node_kind, undirected_edges)."""

    def __init__(self, domain, spacing):
        nx = int(np.ceil(domain.length / spacing))
        ny = int(np.ceil(domain.height / spacing))
        if nx < 2 or ny < 2:
            raise ValueError(
                f"grid spacing {spacing:g} must cover the domain with >= 2x2 cells"
            )
        xs = np.linspace(0.0, domain.length, nx + 1)
        ys = np.linspace(0.0, domain.height, ny + 1)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        self.positions = np.column_stack([gx.ravel(), gy.ravel()])
        self.nx, self.ny = nx, ny
        self.spacing = (domain.length / nx, domain.height / ny)
        kinds = np.zeros(self.positions.shape[0], dtype=np.int64)
        boundary = (
            (self.positions[:, 0] == 0.0)
            | (self.positions[:, 0] == domain.length)
            | (self.positions[:, 1] == 0.0)
            | (self.positions[:, 1] == domain.height)
        )
        kinds[boundary] = 1  # wall
        self.inside_obstacle = np.zeros(self.positions.shape[0], dtype=bool)
        if domain.has_obstacle:
            cx, cy = domain.obstacle_center
            r = np.hypot(self.positions[:, 0] - cx, self.positions[:, 1] - cy)
            self.inside_obstacle = r < domain.obstacle_radius
            kinds[self.inside_obstacle] = KIND_OBSTACLE
        self.node_kind = kinds
        self.n_nodes = self.positions.shape[0]
        self._cache = {}

    def node_index(self, ix, iy):
        return ix * (self.ny + 1) + iy

    def cell_of(self, p):
        ix = min(max(int(p[0] // self.spacing[0]), 0), self.nx - 1)
        iy = min(max(int(p[1] // self.spacing[1]), 0), self.ny - 1)
        return ix, iy

    def undirected_edges(self):
        """Lattice links, omitting endpoints inside the obstacle."""
        if "lattice" not in self._cache:
            pairs = []
            for ix in range(self.nx + 1):
                for iy in range(self.ny + 1):
                    a = self.node_index(ix, iy)
                    if ix < self.nx:
                        pairs.append((a, self.node_index(ix + 1, iy)))
                    if iy < self.ny:
                        pairs.append((a, self.node_index(ix, iy + 1)))
            pairs = np.array(pairs, dtype=np.int64)
            ok = ~(self.inside_obstacle[pairs[:, 0]] | self.inside_obstacle[pairs[:, 1]])
            pairs = np.sort(pairs[ok], axis=1)
            self._cache["lattice"] = np.unique(pairs, axis=0)
        return self._cache["lattice"]


def build_grid_transfer(src_mesh, grid_spacing, direction, params, domain=None, grid=None):
    """Transfer edges between mesh nodes and the corners of their grid cell.

    Each source-mesh node pairs with the 4 corners of the uniform-grid cell
    containing it; corners inside the obstacle are omitted. ``direction``
    'down' orients edges mesh->grid, 'up' grid->mesh (the same pairing
    reversed, as the grid variant has no containing triangle to query).
    Nodes whose 4 corners all fall inside the obstacle are dropped with a
    warning.
    """
    if grid is None:
        if domain is None:
            lo, hi = src_mesh.bounding_box()
            from .mesh import ChannelDomain

            domain = ChannelDomain(float(hi[0]), float(hi[1]))
        grid = GridLevel(domain, grid_spacing)
    if grid.nx < 2 or grid.ny < 2:
        raise ValueError("grid_spacing must cover the domain with >= 2x2 cells")
    mesh_idx, grid_idx = [], []
    for i, p in enumerate(src_mesh.positions):
        ix, iy = grid.cell_of(p)
        corners = [
            grid.node_index(ix, iy),
            grid.node_index(ix + 1, iy),
            grid.node_index(ix, iy + 1),
            grid.node_index(ix + 1, iy + 1),
        ]
        kept = [c for c in corners if not grid.inside_obstacle[c]]
        if not kept:
            warnings.warn(
                f"source node {i} dropped: all grid-cell corners inside obstacle"
            )
            continue
        mesh_idx.extend([i] * len(kept))
        grid_idx.extend(kept)
    mesh_idx = np.asarray(mesh_idx, dtype=np.int64)
    grid_idx = np.asarray(grid_idx, dtype=np.int64)
    if direction == "down":
        senders, receivers = mesh_idx, grid_idx
        pos_s, pos_r = src_mesh.positions, grid.positions
        n_src, n_dst = src_mesh.n_nodes, grid.n_nodes
    else:
        senders, receivers = grid_idx, mesh_idx
        pos_s, pos_r = grid.positions, src_mesh.positions
        n_src, n_dst = grid.n_nodes, src_mesh.n_nodes
    order = np.lexsort((senders, receivers))
    senders, receivers = senders[order], receivers[order]
    d = pos_s[senders] - pos_r[receivers]
    feats = np.column_stack([d, np.hypot(d[:, 0], d[:, 1])])
    encoder = params.down_edge_encoder if direction == "down" else params.up_edge_encoder
    feats = params.edge_normalizers[direction].apply(feats)
    return TransferGraph(
        direction, n_src, n_dst, senders, receivers, nn.mlp_apply(encoder, feats)
    )
