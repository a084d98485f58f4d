"""Dynamic-phasor simulation and SSO analysis of power systems with
grid-following inverters."""

__version__ = "0.1.0"
