"""Perturbative phase shifts and contrast for light-pulse atom interferometers."""
__version__ = "0.1.0"
