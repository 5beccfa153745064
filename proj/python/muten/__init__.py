"""Mutant-ensemble gradient attacks on small CNNs."""

from ._muten import *  # noqa: F401,F403
from ._muten import CSV_HEADER, Error

__all__ = [name for name in dir() if not name.startswith("_")]
