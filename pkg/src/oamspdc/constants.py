"""Physical constants (CODATA 2018), documented to 9 significant digits."""

# Reduced Planck constant, J s
HBAR = 1.054571817e-34

# Speed of light in vacuum, m/s (exact)
C_LIGHT = 299792458.0
