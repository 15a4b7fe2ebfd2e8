"""Cough classification with single models and multi-model fusion."""

from ._core import *  # noqa: F401,F403
from ._core import CoughfuseError, __version__  # noqa: F401
