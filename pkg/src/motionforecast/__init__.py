"""Online skeletal motion forecasting with a temporal conditional VAE."""

__version__ = "0.1.0"
