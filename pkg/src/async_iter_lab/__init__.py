"""Rate certificates, trace verifiers, and deterministic simulators for
asynchronous first-order iterations."""

__version__ = "0.1.0"
