"""Hierarchical message-passing processor and the next-step model.

A processor schedule is a sequence of step kinds: H (fine-graph update),
L (coarse-graph update), D (downsample fine->coarse), U (upsample
coarse->fine). Schedules are written as e.g. ``p=1H 11L 1H (U=1,D=1)``:
runs of H and L steps with a D or U inserted at every switch between
levels, and the declared U/D counts double-checked against the switches.
Every step owns an independent pair of update MLPs (no weight tying).
"""

from __future__ import annotations

import re

import numpy as np

from . import graphs, nn
from .graphs import ONE_HOT_WIDTH, GridLevel, as_field_matrix
from .mesh import KIND_INFLOW

STEP_FINE = "H"
STEP_COARSE = "L"
STEP_DOWN = "D"
STEP_UP = "U"

# Node kinds whose values are imposed by boundary conditions after a step.
PRESCRIBED_KINDS = (KIND_INFLOW,)


class ScheduleError(ValueError):
    """Malformed or inconsistent processor schedule."""


class Schedule:
    """Parsed processor schedule: ordered H/L/D/U steps."""

    def __init__(self, steps, text=None):
        self.steps = tuple(steps)
        self.text = text if text is not None else self._format()
        if not self.steps or self.steps[0] != STEP_FINE or self.steps[-1] != STEP_FINE:
            raise ScheduleError("schedule must begin and end with an H step")

    def _format(self):
        runs = []
        for s in self.steps:
            if s in (STEP_FINE, STEP_COARSE):
                if runs and runs[-1][0] == s:
                    runs[-1][1] += 1
                else:
                    runs.append([s, 1])
        body = " ".join(f"{n}{s}" for s, n in runs)
        return f"p={body} (U={self.u_count},D={self.d_count})"

    @property
    def total_mps(self):
        return len(self.steps)

    @property
    def u_count(self):
        return self.steps.count(STEP_UP)

    @property
    def d_count(self):
        return self.steps.count(STEP_DOWN)

    def __eq__(self, other):
        return isinstance(other, Schedule) and self.steps == other.steps

    def __repr__(self):
        return f"Schedule({self.text!r})"


_SCHEDULE_RE = re.compile(
    r"^p=\s*((?:\d+[HL]\s+)*\d+[HL])\s*\(\s*U\s*=\s*(\d+)\s*,\s*D\s*=\s*(\d+)\s*\)$"
)


def parse_schedule(text):
    """Parse a schedule string like ``p=3H 6L 3H 6L 3H (U=2, D=2)``.

    A D step is inserted at every H->L switch and a U step at every L->H
    switch; the declared U/D counts must match the switch counts. The total
    message-passing step count includes the D and U steps.
    """
    m = _SCHEDULE_RE.match(text.strip())
    if m is None:
        raise ScheduleError(f"malformed schedule: {text!r}")
    segments = []
    for part in m.group(1).split():
        segments.append((int(part[:-1]), part[-1]))
    if any(n == 0 for n, _ in segments):
        raise ScheduleError("zero-length runs are not allowed")
    steps = []
    prev = None
    u_seen = d_seen = 0
    for n, kind in segments:
        if prev == STEP_FINE and kind == STEP_COARSE:
            steps.append(STEP_DOWN)
            d_seen += 1
        elif prev == STEP_COARSE and kind == STEP_FINE:
            steps.append(STEP_UP)
            u_seen += 1
        steps.extend([kind] * n)
        prev = kind
    u_decl, d_decl = int(m.group(2)), int(m.group(3))
    if (u_decl, d_decl) != (u_seen, d_seen):
        raise ScheduleError(
            f"declared (U={u_decl},D={d_decl}) but the level switches imply "
            f"(U={u_seen},D={d_seen})"
        )
    return Schedule(steps, text=text.strip())


class ProcessorBlock:
    """Edge and node update MLPs for one schedule step."""

    def __init__(self, kind, latent_size, hidden_size, rng):
        self.kind = kind
        self.edge_mlp = nn.Mlp(3 * latent_size, latent_size, hidden_size, True, rng)
        self.node_mlp = nn.Mlp(2 * latent_size, latent_size, hidden_size, True, rng)

    def named_parameters(self, prefix):
        out = self.edge_mlp.named_parameters(f"{prefix}/edge")
        out.update(self.node_mlp.named_parameters(f"{prefix}/node"))
        return out

    def zero_(self):
        self.edge_mlp.zero_()
        self.node_mlp.zero_()
        return self


class ModelParams:
    """All learnable state: encoders, per-step processor blocks, decoder,
    and the running normalizers."""

    def __init__(
        self,
        schedule,
        field_width=1,
        latent_size=128,
        hidden_size=128,
        seed=0,
        coarse_kind="mesh",
    ):
        if isinstance(schedule, str):
            schedule = parse_schedule(schedule)
        if coarse_kind not in ("mesh", "grid"):
            raise ValueError("coarse_kind must be 'mesh' or 'grid'")
        self.schedule = schedule
        self.field_width = field_width
        self.latent_size = latent_size
        self.hidden_size = hidden_size
        self.seed = seed
        self.coarse_kind = coarse_kind
        rng = np.random.default_rng(seed)
        d, h = latent_size, hidden_size
        self.fine_node_encoder = nn.Mlp(ONE_HOT_WIDTH + field_width, d, h, True, rng)
        self.fine_edge_encoder = nn.Mlp(3, d, h, True, rng)
        self.coarse_node_encoder = nn.Mlp(ONE_HOT_WIDTH, d, h, True, rng)
        self.coarse_edge_encoder = nn.Mlp(3, d, h, True, rng)
        self.down_edge_encoder = nn.Mlp(3, d, h, True, rng)
        self.up_edge_encoder = nn.Mlp(3, d, h, True, rng)
        self.blocks = [ProcessorBlock(k, d, h, rng) for k in schedule.steps]
        self.decoder = nn.Mlp(d, field_width, h, layer_norm=False, rng=rng)
        self.node_field_normalizer = nn.Normalizer(field_width)
        self.edge_normalizers = {
            k: nn.Normalizer(3) for k in ("fine", "coarse", "down", "up")
        }
        self.output_normalizer = nn.Normalizer(field_width)

    def _encoders(self):
        return {
            "enc_fine_node": self.fine_node_encoder,
            "enc_fine_edge": self.fine_edge_encoder,
            "enc_coarse_node": self.coarse_node_encoder,
            "enc_coarse_edge": self.coarse_edge_encoder,
            "enc_down_edge": self.down_edge_encoder,
            "enc_up_edge": self.up_edge_encoder,
        }

    def named_parameters(self):
        out = {}
        for name, mlp in self._encoders().items():
            out.update(mlp.named_parameters(name))
        for i, block in enumerate(self.blocks):
            out.update(block.named_parameters(f"block_{i:03d}_{block.kind}"))
        out.update(self.decoder.named_parameters("decoder"))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_(self):
        """Zero all MLP weights; the model becomes the identity map."""
        for mlp in self._encoders().values():
            mlp.zero_()
        for block in self.blocks:
            block.zero_()
        self.decoder.zero_()
        return self

    # -- checkpoint round-trip ------------------------------------------

    def save(self, path):
        blocks = {
            "meta/config": np.array(
                [self.field_width, self.latent_size, self.hidden_size, self.seed],
                dtype=np.float64,
            ),
            "meta/schedule": np.array(
                [ord(c) for c in self.schedule.text], dtype=np.float64
            ),
            "meta/coarse_kind": np.array(
                [ord(c) for c in self.coarse_kind], dtype=np.float64
            ),
        }
        for name, tensor in self.named_parameters().items():
            blocks[f"param/{name}"] = tensor.data
        for group, norm in self._normalizers().items():
            for key, arr in norm.state().items():
                blocks[f"norm/{group}/{key}"] = arr
        nn.save_blocks(path, blocks)

    def _normalizers(self):
        out = {"node_fields": self.node_field_normalizer, "output": self.output_normalizer}
        for k, v in self.edge_normalizers.items():
            out[f"edge_{k}"] = v
        return out

    @classmethod
    def load(cls, path):
        blocks = nn.load_blocks(path)
        fw, d, h, seed = (int(v) for v in blocks["meta/config"])
        schedule = parse_schedule("".join(chr(int(c)) for c in blocks["meta/schedule"]))
        coarse_kind = "".join(chr(int(c)) for c in blocks["meta/coarse_kind"])
        params = cls(schedule, fw, d, h, seed, coarse_kind)
        for name, tensor in params.named_parameters().items():
            tensor.data[...] = blocks[f"param/{name}"]
        for group, norm in params._normalizers().items():
            norm.load_state(
                {
                    "count": blocks[f"norm/{group}/count"],
                    "sum": blocks[f"norm/{group}/sum"],
                    "sum_sq": blocks[f"norm/{group}/sum_sq"],
                }
            )
        return params


# ---------------------------------------------------------------------------
# The four message-passing operators (residual on both edges and nodes)
# ---------------------------------------------------------------------------


def _graph_update(graph, block):
    v = graph.node_latents
    e = graph.edge_latents
    vs = nn.spmm(graph.gather_send, v)
    vr = nn.spmm(graph.gather_recv, v)
    e_new = nn.add(e, block.edge_mlp(nn.concat([e, vs, vr])))
    agg = nn.spmm(graph.aggregate, e_new)
    v_new = nn.add(v, block.node_mlp(nn.concat([v, agg])))
    return graph.replace(node_latents=v_new, edge_latents=e_new)


def high_res_update(graph, block):
    """One message-passing step on the fine graph."""
    return _graph_update(graph, block)


def low_res_update(graph, block):
    """One message-passing step on the coarse graph."""
    return _graph_update(graph, block)


def _transfer_update(src_graph, dst_graph, transfer, block):
    e = transfer.edge_latents
    vs = nn.spmm(transfer.gather_send, src_graph.node_latents)
    vr = nn.spmm(transfer.gather_recv, dst_graph.node_latents)
    e_new = nn.add(e, block.edge_mlp(nn.concat([e, vs, vr])))
    agg = nn.spmm(transfer.aggregate, e_new)
    v_new = nn.add(
        dst_graph.node_latents,
        block.node_mlp(nn.concat([dst_graph.node_latents, agg])),
    )
    return dst_graph.replace(node_latents=v_new), transfer.replace(e_new)


def downsample_update(fine, coarse, transfer, block):
    """Move information fine->coarse; fine latents are untouched."""
    return _transfer_update(fine, coarse, transfer, block)


def upsample_update(coarse, fine, transfer, block):
    """Move information coarse->fine; coarse latents are untouched."""
    return _transfer_update(coarse, fine, transfer, block)


# ---------------------------------------------------------------------------
# Full encode - process - decode step
# ---------------------------------------------------------------------------


def forward_normalized_delta(params, fine_mesh, coarse_level, fields):
    """Differentiable core of the model: normalized per-node delta.

    Returns (delta Tensor (N, field_width), input leaf Tensor) so callers
    can take gradients with respect to either parameters or inputs.
    """
    leaf = fields if isinstance(fields, nn.Tensor) else nn.Tensor(as_field_matrix(fields))
    xn = params.node_field_normalizer.apply(leaf)
    fine = graphs.encode_fine(fine_mesh, xn, params)
    coarse = graphs.encode_coarse(coarse_level, params) if coarse_level is not None else None
    down = up = None
    if params.schedule.d_count > 0 or params.schedule.u_count > 0:
        if coarse_level is None:
            raise ValueError("schedule uses D/U steps but no coarse level was given")
        if isinstance(coarse_level, GridLevel):
            down = graphs.build_grid_transfer(
                fine_mesh, None, "down", params, grid=coarse_level
            )
            up = graphs.build_grid_transfer(
                fine_mesh, None, "up", params, grid=coarse_level
            )
        else:
            down = graphs.build_transfer(fine_mesh, coarse_level, "down", params)
            up = graphs.build_transfer(coarse_level, fine_mesh, "up", params)
    for step, block in zip(params.schedule.steps, params.blocks):
        if step == STEP_FINE:
            fine = high_res_update(fine, block)
        elif step == STEP_COARSE:
            coarse = low_res_update(coarse, block)
        elif step == STEP_DOWN:
            coarse, down = downsample_update(fine, coarse, down, block)
        else:
            fine, up = upsample_update(coarse, fine, up, block)
    delta = params.decoder(fine.node_latents)
    return delta, leaf


def predict_step(fine_mesh, coarse_mesh, fields, params, schedule=None, boundary_values=None):
    """One next-step prediction on the fine mesh.

    Encodes both levels and the transfer graphs, runs the schedule, decodes
    a normalized delta, and adds its unnormalized value to the current
    fields. Nodes of a prescribed kind (inflow) are overwritten with their
    boundary values afterwards; by default they keep their current value,
    matching a time-constant Dirichlet condition.
    """
    if schedule is not None:
        sched = parse_schedule(schedule) if isinstance(schedule, str) else schedule
        if sched != params.schedule:
            raise ScheduleError(
                "schedule argument does not match the schedule the parameters "
                f"were built for ({params.schedule.text!r})"
            )
    fields_mat = as_field_matrix(fields)
    delta_n, _ = forward_normalized_delta(params, fine_mesh, coarse_mesh, fields_mat)
    delta = params.output_normalizer.unapply(delta_n.data)
    nxt = fields_mat + delta
    mask = np.isin(fine_mesh.node_kind, PRESCRIBED_KINDS)
    if boundary_values is not None:
        nxt[mask] = as_field_matrix(boundary_values)[mask]
    else:
        nxt[mask] = fields_mat[mask]
    fields = np.asarray(fields, dtype=np.float64)
    return nxt[:, 0] if fields.ndim == 1 else nxt
