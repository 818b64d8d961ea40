"""vulnscore: CVSS v3.1 vector and score prediction from vulnerability descriptions."""

__version__ = "0.1.0"
