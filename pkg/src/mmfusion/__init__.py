"""Late-fusion multimodal classifier for four-view mammograms plus tabular reports."""

__version__ = "0.1.0"
