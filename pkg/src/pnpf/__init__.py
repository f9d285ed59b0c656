"""Finite-volume simulator for non-isothermal electrokinetics.

Solves the dimensionless Poisson-Nernst-Planck-Fourier system (coupled ion
transport, electrostatics, and temperature) on admissible orthogonal meshes
with two structure-preserving time integrators:

* a first-order semi-implicit scheme that decouples the temperature solve, and
* a second-order modified Crank-Nicolson scheme posed in the logarithms of
  concentration and temperature.

Both conserve ionic mass, keep concentrations and temperature positive, and
increase the discrete entropy of a closed, insulated cell.
"""

__version__ = "0.1.0"
