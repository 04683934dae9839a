"""Camera re-localization toolkit: robust scene-coordinate losses, a
per-point confidence regressor, Kabsch/PnP pose solvers, and
confidence-scored hypothesis sampling with iterative refinement."""

__version__ = "0.1.0"
