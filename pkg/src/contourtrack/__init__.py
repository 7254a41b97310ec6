"""Cell contour tracking: geometry, matching energies, a learned tracker,
and the evaluation and labeling tools around them."""

__version__ = "0.1.0"
