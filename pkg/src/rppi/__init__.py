"""Online echo-state-network identification with sampling-based predictive control."""
__version__ = "0.1.0"
