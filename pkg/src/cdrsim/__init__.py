"""Simulation, estimation and inference for mass-balance CDR quantification in enhanced rock weathering."""

__version__ = "0.1.0"
