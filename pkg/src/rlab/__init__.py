"""Rolling-ball physics laboratory: simulation, rendering and learned predictors."""

__version__ = "0.1.0"
