"""Monte Carlo laboratory for trace moments of vector-valued random
Schrodinger operators with matrix noise, cross-validated against a direct
matrix-discretization oracle."""

__version__ = "0.1.0"
