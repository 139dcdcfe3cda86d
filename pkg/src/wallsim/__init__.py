"""Deterministic desk-scale simulator and autonomy stack for a UGV that
finds color-coded bricks, picks them with an eye-in-hand visual servo and
builds a patterned wall."""

__version__ = "0.1.0"
