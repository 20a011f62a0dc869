"""Cash-flow underwriting from bank-statement transaction data."""

__version__ = "0.1.0"
