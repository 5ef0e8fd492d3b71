"""Community-structured variable-order Markov chains and temporal networks."""

__version__ = "0.1.0"
