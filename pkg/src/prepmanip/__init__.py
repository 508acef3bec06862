"""Two-arm preparatory manipulation: simulator, heuristics, learned affordance pipeline."""

__version__ = "0.1.0"
