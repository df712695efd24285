"""vwapx: dual-level VWAP-tracking trade execution."""
__version__ = "0.1.0"
