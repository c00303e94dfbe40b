"""Audio-driven mouth animation: adversarial TCN audio-to-mouth mapping and facial map synthesis."""

__version__ = "0.1.0"
