"""Nested Uhrig (QDD) dynamical-decoupling sequences and arbitrary-precision spin-bath simulation."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("qddlab")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"
