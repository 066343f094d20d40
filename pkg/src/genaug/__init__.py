"""genaug: few-shot data augmentation with meta-weighted prefix-tuned generators."""

__version__ = "0.1.0"
