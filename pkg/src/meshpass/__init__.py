"""meshpass: two-level message passing on unstructured triangular meshes.

Subpackages cover mesh generation and interpolation, latent graph
construction, a minimal autodiff/NN stack, the hierarchical processor,
a classical advection-diffusion reference solver, dataset generation,
training/evaluation, and graph-spectral error analysis.
"""

__version__ = "0.1.0"
