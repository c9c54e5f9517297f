"""Grid-battle agents that act on predicted future measurements, with goal
vectors supplied either by fixed rules or by small evolved networks."""

__version__ = "0.1.0"
