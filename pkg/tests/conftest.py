"""Shared test substrates and independent oracles.

The closed-form quadratic expressions below are derived by hand from
grad(theta) = A theta - b and are the ground truth the optimizer paths
are checked against; they never call into the step functions.
"""

import numpy as np
import pytest

from flatopt import Batch, Objective, Rng
from flatopt.vectors import l2_norm


def quad_closed_form(mat, lin, theta, rho, rho_fd=None):
    """Exact (grad, sam_grad, proxy_grad, proxy_sam_grad, flat_grad) for a
    quadratic objective.

    For grad(x) = A x - b, a step of size r along unit direction u moves
    the gradient by r*A u exactly, so every perturbed gradient has a
    closed form.
    """
    rho_fd = rho if rho_fd is None else rho_fd
    grad = mat @ theta - lin
    g_norm = l2_norm(grad)
    if g_norm < 1e-12:  # degenerate point: every term collapses
        zero = np.zeros_like(grad)
        return grad, grad.copy(), grad.copy(), grad.copy(), zero
    sam_grad = grad + rho * (mat @ grad) / g_norm
    incr = sam_grad - grad  # = rho * A g / |g|
    proxy_grad = grad + rho * (mat @ incr) / l2_norm(incr)
    p_norm = l2_norm(proxy_grad)
    proxy_sam_grad = proxy_grad + rho_fd * (mat @ proxy_grad) / p_norm
    flat_grad = rho * (mat @ proxy_grad) / p_norm  # = (rho/rho_fd)(g1 - g0)
    return grad, sam_grad, proxy_grad, proxy_sam_grad, flat_grad


def cflat_direction_closed_form(mat, lin, theta, rho, flat_weight, rho_fd=None):
    _, sam_grad, _, _, flat_grad = quad_closed_form(mat, lin, theta, rho, rho_fd)
    return sam_grad + flat_weight * flat_grad


class NoisyQuadratic(Objective):
    """Minibatch quadratic: the batch rows perturb the linear term.

    loss = 0.5 theta'A theta - (b + mean(rows))' theta, so the minibatch
    gradient is A theta - b - mean(rows): the expected objective is the
    plain quadratic and the per-batch noise is zero-mean, the standard
    stochastic-gradient setting.
    """

    def __init__(self, mat, lin):
        self.mat = np.asarray(mat, dtype=np.float64)
        self.lin = np.asarray(lin, dtype=np.float64)
        self.param_dim = self.mat.shape[0]

    def loss(self, theta, batch):
        eff = self.lin + batch.inputs.mean(axis=0)
        return float(0.5 * theta @ self.mat @ theta - eff @ theta)

    def gradient(self, theta, batch):
        eff = self.lin + batch.inputs.mean(axis=0)
        return self.mat @ theta - eff


def noise_batch(rng: Rng, dim: int, rows: int = 4, scale: float = 1.0) -> Batch:
    return Batch(
        scale * rng.normal_matrix(rows, dim), np.zeros(rows, dtype=np.int64)
    )


@pytest.fixture
def rng():
    return Rng(1993)
