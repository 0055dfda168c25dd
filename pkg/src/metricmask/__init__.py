"""Unsupervised speech enhancement by optimizing a non-intrusive quality
metric: a masking network is trained against a learned critic that regresses
the metric, so the metric itself never needs to be differentiable."""

__version__ = "0.1.0"
