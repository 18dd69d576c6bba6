"""Radial Stefan problem with surface tension: Euler scheme, particles, physicality checks."""
