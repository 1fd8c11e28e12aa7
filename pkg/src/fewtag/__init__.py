"""Few-shot sequence labeling with similarity emissions and collapsed
label-dependency transfer inside a linear-chain CRF."""

__version__ = "0.1.0"
