"""Numerical toolkit for quasi-Poisson brackets and group-valued momentum maps
on products of matrix groups and conjugacy classes."""

__version__ = "0.1.0"
