"""Stochastic approximation with two-point momentum extrapolation.

Subpackages split along the natural seams: schedule families, step-matrix
algebra, problem instances and sampled oracles, the solvers themselves,
supermartingale diagnostics for the drift recursions, and the experiment
harness with its CLI.
"""

__version__ = "0.1.0"
