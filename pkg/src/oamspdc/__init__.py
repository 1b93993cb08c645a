"""Cascaded-SPDC structured-light simulator and coincidence analysis toolkit.

Submodules:
    modes       Laguerre-Gaussian modes, overlap integrals, coupling weights
    statistics  pump photon-number statistics, gain calibration, loss transforms
    montecarlo  event-level simulation of the cascaded two-crystal experiment
    tagstream   binary timestamp file format
    analysis    coincidence counting, histograms, correlation matrices
    presets     calibrated benchmark configurations
    cli         command-line interface
"""

__version__ = "0.1.0"
