"""Desk-scale laboratory for distributed K-FAC optimization.

A small training core (fully-connected nets with statistics capture), a
Kronecker-factored preconditioner with two damping schemes, a deterministic
simulated data-parallel cluster (S-SGD, MPD-KFAC, DP-KFAC), and an analytic
communication/computation cost model with brute-force verification oracles.
"""

__version__ = "0.1.0"
