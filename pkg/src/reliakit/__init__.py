"""reliakit: reliability and robustness checks for ML models from prediction logs."""

__version__ = "0.1.0"
