"""Discretized incidence-geometry laboratory."""
