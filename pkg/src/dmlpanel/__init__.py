"""dmlpanel package.

Debiased machine-learning estimates of average derivatives in additive fixed-effects panels.
"""

__all__ = []

__version__ = "0.1.0"
