"""Stochastic simulation of dissipative stabilizer memories.

Modules
-------
lattice
    Geometries and configurations with incremental syndromes.
rates
    Jump-rate tables and effective temperatures.
engine
    Seeded trajectory evolution and ensembles.
decoders
    Majority and minimum-weight matching decoders, overlap estimates.
analysis
    Autocorrelation, exponential fits, scans and equilibration times.
oracle
    Exact small-system Liouvillian and classical-generator checks.
"""

__version__ = "0.1.0"
