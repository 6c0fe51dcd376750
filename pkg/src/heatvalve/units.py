"""Unit conventions.

Frequencies and couplings are angular frequencies in rad/ns, times are in ns,
temperatures in mK, and hbar = 1.
"""

from scipy import constants

#: hbar / k_B in ns * mK
HBAR_OVER_KB = constants.hbar / constants.k * 1e12
#: one unit of (rad/ns)^2 * hbar expressed in femtowatt
POWER_FW = constants.hbar * 1e18 * 1e15


def beta_from_mk(temperature):
    """Inverse temperature in ns for a temperature given in mK."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return HBAR_OVER_KB / temperature


def to_femtowatt(current):
    return current * POWER_FW
