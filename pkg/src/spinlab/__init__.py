"""Spin measurement models: coherent states, weak-measurement chains,
thermalizing feedback, their diffusion limit and the oscillator picture."""

__version__ = "0.1.0"
