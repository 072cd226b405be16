"""Grouped annulus-modulated (GAM) transceiver simulation for RIS-assisted symbiotic radio.

Modules
-------
corrchan
    Correlated RIS channel synthesis and reduction to the equivalent model.
echelon
    Stepped row-echelon decompositions (combinatorial pairing and baselines).
hexlat
    Hexagonal-lattice annular constellations and PSK baselines.
xcvr
    Subchannel planning, modulation, SIC detection and SER references.
bench
    Experiment configuration, sweeps and result files behind the ``gamris`` CLI.
"""

__version__ = "0.1.0"
