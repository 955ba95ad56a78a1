"""Desk-scale laboratory for style-transfer stability: Gram-matrix
solution geometry, temporal consistency losses, and a recurrent
feedforward stylizer, all on a minimal numpy autodiff engine."""

__version__ = "0.1.0"
