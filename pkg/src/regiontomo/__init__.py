"""Joint regional quantum state tomography with readout-error estimation."""

__version__ = "0.1.0"
