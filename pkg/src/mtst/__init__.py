"""Multi-resolution patch transformer for long-horizon forecasting."""
