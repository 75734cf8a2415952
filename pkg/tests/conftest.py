"""Shared test oracles, independent of the library code paths they check."""

import struct

import numpy as np
import pytest


def scalar_mean(values):
    """Plain-Python arithmetic mean."""
    total = 0.0
    count = 0
    for v in values:
        total += float(v)
        count += 1
    return total / count


def scalar_biased_var(values):
    """Plain-Python biased variance (divisor = count)."""
    mu = scalar_mean(values)
    return scalar_mean([(float(v) - mu) ** 2 for v in values])


def column_means_2d(matrix):
    rows, cols = matrix.shape
    return [scalar_mean([matrix[i, j] for i in range(rows)]) for j in range(cols)]


def naive_norm_columns(x, epsilon, gamma, beta, r=None, d=None):
    """Per-feature scalar-loop normalization oracle for 2D inputs.

    When r, d are given, applies x_hat*r + d with those values; otherwise
    plain batchnorm (r=1, d=0).
    """
    x = np.asarray(x, dtype=float)
    rows, cols = x.shape
    out = np.zeros_like(x)
    for j in range(cols):
        col = [x[i, j] for i in range(rows)]
        mu = scalar_mean(col)
        sigma = (epsilon + scalar_biased_var(col)) ** 0.5
        rj = 1.0 if r is None else float(np.asarray(r).reshape(-1)[j])
        dj = 0.0 if d is None else float(np.asarray(d).reshape(-1)[j])
        for i in range(rows):
            x_hat = (x[i, j] - mu) / sigma * rj + dj
            out[i, j] = gamma[j] * x_hat + beta[j]
    return out


def reference_bn_backward_2d(d_y, x, epsilon, gamma):
    """Textbook batchnorm input gradient via the d_var/d_mu decomposition.

    Independent derivation path from the library's r-scaled equations.
    """
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    x_centered = x - mu
    d_xhat = d_y * gamma
    d_var = np.sum(d_xhat * x_centered, axis=0) * (-0.5) * inv_std**3
    d_mu = np.sum(d_xhat * (-inv_std), axis=0) + d_var * np.mean(-2.0 * x_centered, axis=0)
    d_x = d_xhat * inv_std + d_var * 2.0 * x_centered / m + d_mu / m
    d_beta = d_y.sum(axis=0)
    d_gamma = np.sum(d_y * x_centered * inv_std, axis=0)
    return d_x, d_beta, d_gamma


def linear_interp(step, x0, y0, x1, y1):
    """Two-anchor linear interpolation oracle with clamping."""
    if step <= x0:
        return y0
    if step >= x1:
        return y1
    return y0 + (y1 - y0) * (step - x0) / (x1 - x0)


def write_idx_images(path, images):
    """IDX image writer (test oracle): big-endian header + uint8 pixels."""
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", 0x00000803, count, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", 0x00000801, labels.shape[0]))
        f.write(labels.tobytes())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
