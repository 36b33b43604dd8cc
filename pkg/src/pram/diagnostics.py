"""Exposition-only quantities that the estimators do not use."""

from .mechanism import ZeroMarginal, reversion_probabilistic

__all__ = ["ZeroMarginal", "reversion_probabilistic"]
