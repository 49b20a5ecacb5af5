"""Parallel ReLU networks with weight decay for nonparametric regression,
with constructive B-spline networks, bound calculators and classical
locally adaptive baselines."""

__version__ = "0.1.0"
