"""srforge: symbolic-regression tooling at desk scale.

Pipeline: synthetic skeleton/corpus generation -> set-style transformer
encoders with a token decoder -> training -> tree-edit-distance evaluation.
"""

__version__ = "0.1.0"
