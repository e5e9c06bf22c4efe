"""Semi-Lagrangian solver for the regularized Hughes model of crowd evacuation."""

__version__ = "0.1.0"
