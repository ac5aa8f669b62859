"""Symmetry-first world tracking: Lie streams, equivariant tracker, predictive hierarchy."""
