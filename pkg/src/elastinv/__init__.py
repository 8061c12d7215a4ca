"""Recover elastic modulus and Poisson's ratio maps from 2D strain images.

The package contains a plane-strain finite-element data generator, a numpy
reverse-mode autodiff engine, UNet and dense-MLP networks, physics losses
with self-adaptive weights, a training loop and a command-line interface
(``elastinv``).
"""

__version__ = "0.1.0"
