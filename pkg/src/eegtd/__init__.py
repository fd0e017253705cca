"""EEG-based single-trial video target detection: synthetic data, training,
streaming online inference, and model analysis."""

__version__ = "0.1.0"
