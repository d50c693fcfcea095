"""Learning directed acyclic hypergraphs from higher-order additive noise data."""

__version__ = "0.1.0"
