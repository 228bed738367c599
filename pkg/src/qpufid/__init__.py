"""Simulator for qPUF-based client-server identification."""

__version__ = "0.1.0"
