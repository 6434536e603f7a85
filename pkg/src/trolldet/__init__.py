"""Troll-tweet detection: pluggable embedding pathways feeding pluggable
sequence encoders into a binary classifier, with a full evaluation-metric
suite and a config-driven experiment harness.

Everything numerical is built on numpy with an in-house reverse-mode tape
(:mod:`trolldet.autodiff`), so all gradients are exact and checkable
against finite differences.
"""

__version__ = "0.1.0"
