"""Network-assisted risk-node discovery: partial neighborhood selection plus HMRF."""

__version__ = "0.1.0"
