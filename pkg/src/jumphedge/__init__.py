"""Delta hedging under misspecified jump-diffusion models."""
__version__ = "0.1.0"
