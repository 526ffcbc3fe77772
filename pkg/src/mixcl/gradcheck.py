"""Finite-difference gradient checks for :class:`SequenceModel` losses."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from ._validation import check_positive_int, check_random_state


@dataclass
class GradCheckResult:
    coords: np.ndarray
    autograd: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0


def finite_difference_check(
    model,
    loss_fn: Callable[[object], torch.Tensor],
    dtype: torch.dtype = torch.float64,
    n_coords: int = 100,
    h_rel: float = 1e-4,
    rng=None,
    floor: float = 1e-3,
    floor_theta: float = 0.1,
) -> GradCheckResult:
    """Compare autograd in ``dtype`` against central differences in float64.

    ``loss_fn(model)`` must rebuild the loss from scratch. Coordinates are
    drawn uniformly from those with a non-zero autograd entry. The step for
    coordinate ``i`` is ``h_rel * max(|theta_i|, floor_theta)``: relative to the
    parameter, with a floor so zero-initialized biases still move. Relative error is
    ``|g - fd| / max(|g|, |fd|, floor * max|fd|)`` so near-zero entries are
    judged against the gradient's overall scale.
    """
    n_coords = check_positive_int(n_coords, "n_coords")
    rng = check_random_state(rng)
    ref = copy.deepcopy(model).to(torch.float64)
    test = copy.deepcopy(model).to(dtype)
    grad = test.loss_gradient(lambda: loss_fn(test)).double().numpy()
    nonzero = np.flatnonzero(grad)
    coords = np.sort(rng.choice(nonzero, size=min(n_coords, nonzero.size), replace=False))
    theta = ref.flat_parameters()
    numeric = np.empty(coords.size)
    with torch.no_grad():
        for j, i in enumerate(coords):
            h = h_rel * max(abs(float(theta[i])), floor_theta)
            shifted = theta.clone()
            shifted[i] += h
            ref.set_flat_parameters(shifted)
            up = float(loss_fn(ref))
            shifted[i] -= 2 * h
            ref.set_flat_parameters(shifted)
            down = float(loss_fn(ref))
            numeric[j] = (up - down) / (2 * h)
        ref.set_flat_parameters(theta)
    auto = grad[coords]
    scale = floor * float(np.abs(numeric).max()) if numeric.size else 0.0
    denom = np.maximum.reduce([np.abs(auto), np.abs(numeric), np.full(auto.shape, max(scale, 1e-300))])
    return GradCheckResult(coords, auto, numeric, np.abs(auto - numeric) / denom)
