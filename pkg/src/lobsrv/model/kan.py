"""Kolmogorov-Arnold layer: a learnable spline plus a SiLU base on every edge."""

from __future__ import annotations

import math

import numpy as np

from lobsrv import tensor as T
from lobsrv.model.nn import Module, parameter
from lobsrv.tensor import Tensor

GRID_RANGE = (-3.0, 3.0)


class KANLayer(Module):
    """``out_j = sum_i base_ji * silu(x_i) + scale_ji * sum_m coef_jim * B_m(x_i)``.

    B-spline bases live on a static uniform grid over ``[-3, 3]``; inputs
    outside the grid are clamped onto it.
    """

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, grid_size: int = 5, spline_order: int = 3):
        self.in_width = n_in
        self.out_width = n_out
        self.grid_size = grid_size
        self.spline_order = spline_order
        bound = 1.0 / math.sqrt(n_in)
        self.base_weight = parameter(rng.uniform(-bound, bound, size=(n_out, n_in)))
        self.spline_weight = parameter(rng.uniform(-bound, bound, size=(n_out, n_in)))
        self.spline_coeffs = parameter(rng.normal(0.0, 0.1, size=(n_out, n_in, grid_size + spline_order)))

    @property
    def knots(self) -> np.ndarray:
        return T.uniform_knots(*GRID_RANGE, self.grid_size, self.spline_order)

    def bases(self, x) -> Tensor:
        return T.bspline_basis(x, *GRID_RANGE, self.grid_size, self.spline_order)

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.in_width)
        base = T.matmul(T.silu(flat), self.base_weight.T)
        nb = self.grid_size + self.spline_order
        B = self.bases(flat).reshape(-1, self.in_width * nb)
        coef = self.spline_coeffs * self.spline_weight.reshape(self.out_width, self.in_width, 1)
        spline = T.matmul(B, coef.reshape(self.out_width, self.in_width * nb).T)
        return (base + spline).reshape(lead + (self.out_width,))
