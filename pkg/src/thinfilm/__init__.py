"""Lie-symmetry verification toolkit and numerical laboratory for the
sixth-order thin film equation u_t = (f(u) u_xxxxx)_x."""

__version__ = "0.1.0"
