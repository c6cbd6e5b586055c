"""Simulation and least squares estimation for fractional Ornstein-Uhlenbeck
processes with a periodic mean, together with their limit laws."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
