"""Weighted elliptic inequalities and weighted Hodge decompositions on planar grids."""

__version__ = "0.1.0"
