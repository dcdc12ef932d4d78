"""Zero-shot time-series anomaly detection with adaptive bottlenecks and dual adversarial decoders."""

__version__ = "0.1.0"
