"""Unit conversions into the internal system.

Internal units: lengths in µm, times in µs, energies as angular frequencies
in rad/µs (ħ = 1).  Masses are expressed in ħ·µs/µm² so that ``p/m`` is a
velocity in µm/µs.
"""

from __future__ import annotations

import math

from scipy import constants as const

HBAR = const.hbar
K_B = const.k

# 86.909180527 u, atomic mass of 87Rb.
RB87_MASS_U = 86.909180527

SPECIES_MASS_U = {"Rb87": RB87_MASS_U}


def mass_internal(mass_kg: float) -> float:
    """Mass in ħ·µs/µm² given SI kilograms."""
    return mass_kg * 1e-12 / (HBAR * 1e-6)


def species_mass(species: str = "Rb87") -> float:
    """Internal mass of a named atomic species."""
    try:
        mass_u = SPECIES_MASS_U[species]
    except KeyError:
        raise ValueError(f"unknown species {species!r}; known: {sorted(SPECIES_MASS_U)}") from None
    return mass_internal(mass_u * const.atomic_mass)


def kelvin_to_rad_per_us(temperature_k: float) -> float:
    """Energy k_B·T expressed as rad/µs."""
    return K_B * temperature_k / HBAR * 1e-6


def millikelvin_to_rad_per_us(temperature_mk: float) -> float:
    return kelvin_to_rad_per_us(temperature_mk * 1e-3)


def c3_ghz_um3_to_internal(c3_over_h_ghz: float) -> float:
    """C3/h in GHz·µm³ to C3/ħ in rad/µs·µm³."""
    return 2.0 * math.pi * c3_over_h_ghz * 1e3


def per_ms_to_per_us(rate: float) -> float:
    return rate * 1e-3


# Values quoted for the 59D3/2 + 59D3/2 <-> 61P1/2 + 57F5/2 pair.
C3_GHZ_UM3 = 2.39
C3_DEFAULT = c3_ghz_um3_to_internal(C3_GHZ_UM3)
