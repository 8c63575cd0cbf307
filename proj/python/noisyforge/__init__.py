"""Noisy training and variance-aware noisy training at desk scale."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
