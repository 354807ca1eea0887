"""Simulation and analysis of K-synchronous / K-asynchronous parameter-server SGD."""

__version__ = "0.1.0"
