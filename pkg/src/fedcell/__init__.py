"""Indoor small-cell transmit-power control with federated deep Q-learning."""

__version__ = "0.1.0"
