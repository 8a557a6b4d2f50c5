"""Reliable vertical federated learning for traffic state estimation.

Desk-scale simulator covering MI-based provider scoring and selection,
split-model training, and the penalty-based supervision game.
"""

__version__ = "0.1.0"
