"""Digital-twin channel toolkit: ray-traced CIRs, neural correction, MISO-OFDM precoding."""

__version__ = "0.1.0"
