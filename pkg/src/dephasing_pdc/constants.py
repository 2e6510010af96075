"""Physical constants and unit conventions.

Energies are in eV, times in fs. Every rate Gamma (given as an energy) enters
the equations of motion as Gamma / HBAR.
"""

HBAR = 0.6582119569  # eV fs
PLANCK = 2.0 * 3.141592653589793 * HBAR  # eV fs
SPEED_OF_LIGHT = 299.792458  # nm / fs
EPSILON_0 = 8.8541878128e-12  # F / m
ELEMENTARY_CHARGE = 1.602176634e-19  # C
DEBYE = 3.33564095198e-30  # C m
