"""
Orthogonal convolution regularization through the doubly block-Toeplitz view of a
convolutional layer: losses, DBT matrices, spectra and a small training loop.
"""
__version__ = "1.0.0"
