"""Steady incompressible flow with piecewise-constant random forcing:
Taylor-Hood finite elements, a deterministic/stochastic splitting solver with
a linearized variant, a monolithic per-sample reference, and a Monte Carlo
harness for the error statistics."""

__version__ = "0.1.0"
