"""Rotational-control construction of neighboring feasible trajectories.

Modules
-------
quadform   2x2 symmetric forms: class, principal direction, half-amplitude
geometry   control-affine systems, Lie brackets, second-order matrices, audits
drops      drop curves, swept area and excess
rotation   rotational controls and their iterated integrals
simulate   fixed-step integration, violation, displacement and descent checks
nft        neighboring feasible trajectory construction
hjb        value iteration for the constrained discounted problem
scenarios  built-in example systems
cli        command-line drivers
"""

__version__ = "0.1.0"
