"""Simulation and verification toolkit for stationary voter-model measures on Z^d.

The stationary measures are sampled through their dual system of coalescing
random walks; the package also provides the Green-function numerics behind
the dual-walk kernel estimates, crossing/threshold machinery for percolation
questions about the sampled configurations, and the renormalisation
combinatorics (tree embeddings, admissible pairs) used to organise
multi-scale arguments.
"""

__version__ = "0.1.0"
