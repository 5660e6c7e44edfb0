"""Neural CDE and multimodal attention fusion for irregular longitudinal forecasting."""
__version__ = "0.1.0"
