"""Model-based end-to-end learning for multi-target OFDM sensing and communication
under antenna-array impairments."""

__version__ = "0.1.0"
