"""Monotone finite-difference solver for quadratic-cost optimal transport
posed as the second boundary value problem for the Monge-Ampere equation."""

__version__ = "0.1.0"
