"""Abelian sandpiles on random binary trees: exact counts, transfer matrices and cluster statistics."""

__version__ = "0.1.0"
