"""Deterministic round-based simulator for federated learning over
heterogeneous, bandwidth-dynamic clients.

Implements diverse client selection via submodular (facility location)
maximization, per-client Top-k gradient compression with error feedback,
and a per-round closed-form ratio plan under a global time budget,
alongside baseline strategies.
"""

__version__ = "0.1.0"
