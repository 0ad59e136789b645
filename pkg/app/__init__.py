"""Traffic crash-risk forecasting"""
__version__ = "1.0.0"
