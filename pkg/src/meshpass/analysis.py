"""Graph-spectral error analysis, receptive-field probes, and timing.

The graph Fourier transform expands per-node signals in eigenvectors of
the combinatorial Laplacian of the mesh graph (L = degree - adjacency,
unweighted by default; an edge-length weighting is available but off by
default). Eigenvalues are ascending, so low indices correspond to slowly
varying signals; a constant signal loads entirely on the first eigenvalue.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from . import nn
from .graphs import as_field_matrix
from .processor import (
    forward_normalized_delta,
    high_res_update,
    low_res_update,
    downsample_update,
    upsample_update,
)

DEFAULT_EIG_CAP = 4000


class AnalysisError(RuntimeError):
    pass


def graph_laplacian(mesh, weighted=False):
    """Dense combinatorial Laplacian of the mesh graph."""
    edges = mesh.undirected_edges()
    n = mesh.n_nodes
    lap = np.zeros((n, n))
    if weighted:
        d = mesh.positions[edges[:, 0]] - mesh.positions[edges[:, 1]]
        w = 1.0 / np.maximum(np.hypot(d[:, 0], d[:, 1]), 1e-300)
    else:
        w = np.ones(edges.shape[0])
    for (i, j), wij in zip(edges, w):
        lap[i, j] -= wij
        lap[j, i] -= wij
        lap[i, i] += wij
        lap[j, j] += wij
    return lap


@dataclass
class SpectralBasis:
    """Ascending eigenvalues and orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self):
        return self.eigenvalues.shape[0]


def spectral_basis(lap, cap=DEFAULT_EIG_CAP):
    lap = np.asarray(lap, dtype=np.float64)
    if lap.shape[0] > cap:
        raise AnalysisError(
            f"mesh has {lap.shape[0]} nodes, above the dense-eigensolver cap {cap}"
        )
    vals, vecs = np.linalg.eigh(lap)
    return SpectralBasis(vals, vecs)


@dataclass
class PowerSpectrum:
    power: np.ndarray

    @property
    def total(self):
        return float(self.power.sum())


def gft_spectrum(basis, signal):
    """Squared graph-Fourier coefficients; vector signals are analysed per
    component and the powers summed (Parseval: total equals ||signal||^2)."""
    signal = as_field_matrix(signal)
    if signal.shape[0] != basis.n:
        raise AnalysisError("signal length does not match basis size")
    coeffs = basis.eigenvectors.T @ signal
    return PowerSpectrum((coeffs**2).sum(axis=1))


def write_spectrum_csv(path, basis, spectrum):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("n", "lambda_n", "power"))
        for i, (lam, p) in enumerate(zip(basis.eigenvalues, spectrum.power), start=1):
            writer.writerow([i, repr(float(lam)), repr(float(p))])


def fine_graph_distances(mesh):
    """Hop distances between all node pairs of the mesh graph."""
    edges = mesh.undirected_edges()
    n = mesh.n_nodes
    adj = sp.csr_matrix(
        (np.ones(2 * edges.shape[0]),
         (np.concatenate([edges[:, 0], edges[:, 1]]),
          np.concatenate([edges[:, 1], edges[:, 0]]))),
        shape=(n, n),
    )
    return shortest_path(adj, method="D", unweighted=True)


def receptive_field(params, fine_mesh, coarse_mesh, fields=None):
    """Boolean influence mask: entry (i, j) is True when output node i
    depends on the input field at node j (exact reverse-mode Jacobian
    sparsity; dense, so restricted to small meshes)."""
    n = fine_mesh.n_nodes
    if fields is None:
        fields = np.zeros((n, params.field_width))
    fields = as_field_matrix(fields)
    delta, leaf = forward_normalized_delta(params, fine_mesh, coarse_mesh, fields)
    mask = np.zeros((n, n), dtype=bool)
    width = delta.data.shape[1]
    for i in range(n):
        row = np.zeros(n, dtype=bool)
        for c in range(width):
            seed = np.zeros_like(delta.data)
            seed[i, c] = 1.0
            (g,) = nn.backward(delta, seed=seed, wrt=[leaf])
            row |= np.any(g != 0.0, axis=1)
        mask[i] = row
    return mask


def timing_benchmark(params, fine_mesh, coarse_mesh, repeats=5, sample=None,
                     train_config=None):
    """Median wall time per H/L/D/U step (and a full training step when a
    sample is provided). Returns a dict kind -> seconds."""
    from . import graphs

    fields = np.zeros((fine_mesh.n_nodes, params.field_width))
    fine = graphs.encode_fine(
        fine_mesh, params.node_field_normalizer.apply(nn.Tensor(fields)), params
    )
    coarse = graphs.encode_coarse(coarse_mesh, params)
    down = graphs.build_transfer(fine_mesh, coarse_mesh, "down", params)
    up = graphs.build_transfer(coarse_mesh, fine_mesh, "up", params)
    block = params.blocks[0]

    def median_time(fn):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return float(np.median(times))

    out = {
        "H": median_time(lambda: high_res_update(fine, block)),
        "L": median_time(lambda: low_res_update(coarse, block)),
        "D": median_time(lambda: downsample_update(fine, coarse, down, block)),
        "U": median_time(lambda: upsample_update(coarse, fine, up, block)),
        "fine_nodes": fine_mesh.n_nodes,
        "coarse_nodes": coarse_mesh.n_nodes,
        "fine_edges": len(fine.senders),
        "coarse_edges": len(coarse.senders),
    }
    if sample is not None:
        from .training import TrainConfig, train

        cfg = train_config or TrainConfig(steps=repeats, normalizer_steps=0,
                                          latent_size=params.latent_size,
                                          hidden_size=params.hidden_size,
                                          schedule=params.schedule.text)
        history = train(params, [sample], cfg)
        out["train_step"] = float(np.median([h["sec_per_step"] for h in history]))
    return out


def write_timing_csv(path, rows):
    keys = sorted({k for row in rows for k in row})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for row in rows:
            writer.writerow([repr(row[k]) if isinstance(row.get(k), float) else row.get(k, "") for k in keys])


def convergence_curve(eval_rows, baseline_rows):
    """Merge model evaluation rows with the classical-solver baseline into
    one table sorted by edge_min (log-log plots are made from this CSV)."""
    merged = []
    for r in eval_rows:
        merged.append(
            {
                "edge_min": float(r.edge_min),
                "source": r.model,
                "mps": r.mps,
                "schedule": r.schedule,
                "mse1": float(r.mse1),
                "next_step_mse": float(r.next_step_mse),
            }
        )
    for b in baseline_rows:
        merged.append(
            {
                "edge_min": float(b["edge_min"]),
                "source": "solver_baseline",
                "mps": 0,
                "schedule": "",
                "mse1": float(b["mse1"]),
                "next_step_mse": float(b["mse1"]),
            }
        )
    merged.sort(key=lambda row: (row["edge_min"], row["source"]))
    return merged


def write_curve_csv(path, merged):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("edge_min", "source", "mps", "schedule", "mse1", "next_step_mse"))
        for row in merged:
            writer.writerow(
                [
                    repr(row["edge_min"]),
                    row["source"],
                    row["mps"],
                    row["schedule"],
                    repr(row["mse1"]),
                    repr(row["next_step_mse"]),
                ]
            )
