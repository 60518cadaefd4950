"""Simulation and key-rate toolkit for the qubit-like qudit (Chau15) QKD protocol."""

__version__ = "0.1.0"
