"""Low-rank tensor-train assembly and solution of THB-spline Galerkin systems."""

__version__ = "0.1.0"
