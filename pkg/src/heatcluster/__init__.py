"""heatcluster: heatmap-guided root-cause clustering and retraining for small image networks."""

__version__ = "0.1.0"
