"""Archive and analyze software landing pages as citable web surrogates."""

__version__ = "0.1.0"
