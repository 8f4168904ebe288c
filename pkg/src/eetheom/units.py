"""Physical constants and unit conventions.

Energies are expressed in cm^-1, times in fs and temperatures in K
throughout the package.  With hbar in cm^-1*fs, an energy E corresponds
to the angular frequency E/hbar in fs^-1.
"""

from dataclasses import dataclass

#: Reduced Planck constant in cm^-1 * fs.
HBAR = 5308.8

#: Boltzmann constant in cm^-1 / K.
K_BOLTZMANN = 0.695035


@dataclass(frozen=True)
class UnitConstants:
    """Bundle of the unit constants used by the solvers."""

    hbar: float = HBAR
    k_boltzmann: float = K_BOLTZMANN

    def thermal_energy(self, temperature: float) -> float:
        """k_B * T in cm^-1."""
        return self.k_boltzmann * temperature

    def thermal_time(self, temperature: float) -> float:
        """hbar / (k_B * T) in fs; lower bound on valid bath correlation times."""
        return self.hbar / (self.k_boltzmann * temperature)


DEFAULT_UNITS = UnitConstants()


def thermal_beta(temperature: float) -> float:
    """Inverse thermal energy 1/(k_B*T) in 1/cm^-1."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return 1.0 / (K_BOLTZMANN * temperature)
