"""Q-curvature and the Paneitz operator on discretized product 4-manifolds."""

__version__ = "0.1.0"
