"""Simulation and receiver DSP for a 112 Gb/s circular-polarization-multiplexed 8-QAM coherent link."""

__version__ = "0.1.0"
