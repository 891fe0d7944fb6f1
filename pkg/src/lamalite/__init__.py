"""Desk-scale large-mask inpainting with fast Fourier convolutions."""

__version__ = "0.1.0"
