"""Numerical companions for hypercyclic operator groups built from extended backward shifts.

Modules
-------
jordan    steering vectors for a single nilpotent shift block
tensor    commuting shift tuples on product grids and multi-parameter steering
seqspace  the truncated l1 model of the exponential group ``e^{<z,A>}``
mixing    sampled mixing certificates and projective orbit coverage
gallery   symbol criteria for adjoint multipliers and the U/V example
lpgrid    grid models of ``L_p`` and ``L_0`` with dilations and translations
cli       batch experiment runner
"""
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
