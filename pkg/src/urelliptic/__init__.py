"""Grid-level diagnostics for elliptic measure, corona decompositions and
uniform rectifiability of AD-regular boundaries."""

__version__ = "0.1.0"
