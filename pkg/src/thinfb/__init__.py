"""Numerical laboratory for the variable-coefficient thin obstacle problem.

The package solves the Signorini (thin obstacle) variational inequality for a
variable coefficient metric on a half box, extracts and analyzes the free
boundary, performs the partial Hodograph-Legendre transform, and verifies the
resulting degenerate nonlinear PDE together with its Baouendi-Grushin
linearization and the associated generalized Hölder/Campanato machinery.
"""

__version__ = "0.1.0"
