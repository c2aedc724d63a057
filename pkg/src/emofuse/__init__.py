"""Toy-scale multimodal affect model with gated speech-visual fusion experts and a phased training curriculum."""

__version__ = "0.1.0"
