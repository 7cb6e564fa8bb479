"""Imports every module that registers experiments."""

from . import draws, limits, macro, mcmc, puzzles, rgraph, sdefin  # noqa: F401
