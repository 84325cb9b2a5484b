"""Decentralized multi-target exploration with continuous connectivity
maintenance: simulation engine, CLI, and Monte Carlo harness."""

__version__ = "0.1.0"
