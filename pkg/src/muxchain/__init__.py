"""Consensus multiplexing laboratory: Algorand, RapidChain and Bitcoin with concurrent leaders."""

__version__ = "0.1.0"
