"""Sparse EEG source localization toolkit."""

from .model import (ConfigError, DataError, ElectrodeArray, LeadField, Measurements, NoiseSpec, Scenario,
                    SolverError, SourceEstimate, SourceSpace, validate)

__all__ = ["ConfigError", "DataError", "ElectrodeArray", "LeadField", "Measurements", "NoiseSpec", "Scenario",
           "SolverError", "SourceEstimate", "SourceSpace", "validate"]
