"""retdebias: desk-scale bias injection and generative debiasing for a binary
diagnostic classifier over synthetic fundus-like images."""

__version__ = "0.1.0"
