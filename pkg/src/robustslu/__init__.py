"""Joint intent/slot tagging with adversarial paraphrase evaluation and robust training."""

__version__ = "0.1.0"
