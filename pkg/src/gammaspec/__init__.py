"""Digital twin of a CMOS decay-time gamma-photon spectrometer."""

__version__ = "0.1.0"
