"""Multi-task self-supervised graph representation learning with Pareto
task reconciliation."""

__version__ = "0.1.0"
