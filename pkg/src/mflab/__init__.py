"""Kernel-graph approximations of manifold filters, with convergence and navigation experiments."""

__version__ = "0.1.0"
