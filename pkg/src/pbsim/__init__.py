"""Stochastic particle simulator for population balance dynamics.

The simulator evolves an empirical measure of particles carrying a mass, a
position inside a reflecting level-set domain, and optional internal
coordinates.  Events are drawn from a jump process whose menu covers
diffusion/drift moves, particle sources, mass-preserving interactions,
self-interactions, and a clock that keeps the total rate bounded away from
zero.  A diagnostics layer checks the numerically verifiable properties of
the construction at desk scale.
"""

__version__ = "0.1.0"
