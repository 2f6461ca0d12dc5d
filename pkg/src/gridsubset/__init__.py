"""Congestion prediction and solar subset selection on a simulated grid."""

__version__ = "0.1.0"
