"""Field-driven electrons in periodic lattice models: TDSE, relaxation-time
master equation and SBE propagators with Bloch, Houston and polarized
Houston population analysis."""

__version__ = "0.1.0"
