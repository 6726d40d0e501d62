"""smrl — a desk-scale model-based RL lab built around temporal reward smoothing."""

__version__ = "0.1.0"
