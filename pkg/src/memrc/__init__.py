"""Diverse ion-channel memristor reservoirs: device model, characterization and benchmarks."""

__version__ = "0.1.0"
