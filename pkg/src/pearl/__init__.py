"""Frame representation toolkit: encoder composition, spatio-temporal
attention, contrastive fine-tuning heads, and linear-probe evaluation."""

__version__ = "0.1.0"
