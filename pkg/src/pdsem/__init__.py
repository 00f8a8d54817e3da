"""Path dependent structural equation models: graphs, kernels, identification,
simulation and estimation."""

__version__ = "0.1.0"
