"""wadlab: backdoor attacks and fine-tuning defenses for web-attack detectors."""

__version__ = "0.1.0"
