"""Isotropic Gaussian distribution on SO(3).

The distribution is parameterised by a mean rotation and a scalar
variance ``eps``. Its rotation angle ω has the density

.. code-block:: text

    f(ω) = Σ_l (2l+1) exp(−l(l+1)·eps) sin((l+½)ω) / sin(ω/2) · (1 − cos ω) / π

on [0, π], the series being truncated adaptively. The rotation axis is
uniform on the sphere. This series convention is the heat kernel at time
2·eps, so for small eps the rotation vector is close to 𝒩(0, 2·eps·I).

Sampling uses an inverse-CDF table of the angle density, built once per
eps and cached.

Example:

.. code-block:: python

    rng = make_rng(1)
    params = IgSo3Params(eps=0.5, mean=np.eye(3))
    rotations = sample_igso3(params, rng, size=100)
"""
import functools
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from backbone_refine import config
from backbone_refine.geometry import so3_exp

logger = logging.getLogger(__name__)

#: Rows of l per vectorised block of the series
_L_CHUNK = 256


@dataclass(frozen=True, eq=False)
class IgSo3Params:
    """Mean and variance of an isotropic Gaussian on SO(3)."""

    #: Variance, 1 − ᾱ^T of the orientation schedule
    eps: float

    #: (3, 3) mean rotation, or (N, 3, 3) for one distribution per residue
    mean: np.ndarray

    def __post_init__(self):
        assert self.eps > 0, f"IGSO(3) variance must be positive, got {self.eps}"


@functools.lru_cache(maxsize=256)
def truncation_level(eps: float) -> int:
    """Number of series terms for variance `eps`.

    Stops at the first l whose bound (2l+1)²·exp(−l(l+1)·eps) is below
    1e-8 of the running sum of bounds, capped at 5000.
    """
    ls = np.arange(config.IGSO3_MAX_L + 1, dtype=float)
    bound = (2 * ls + 1) ** 2 * np.exp(-ls * (ls + 1) * eps)
    ratio = bound / np.cumsum(bound)
    below = np.flatnonzero(ratio < config.IGSO3_SERIES_TOLERANCE)
    level = int(below[0]) if len(below) else config.IGSO3_MAX_L
    if level == config.IGSO3_MAX_L:
        logger.warning("IGSO(3) series for eps=%g hit the truncation cap %d", eps, level)
    logger.debug("IGSO(3) eps=%g truncated at L=%d", eps, level)
    return level


def igso3_series(omega: np.ndarray, eps: float) -> np.ndarray:
    """Truncated series Σ (2l+1) e^{−l(l+1)eps} sin((l+½)ω)/sin(ω/2).

    Below ω/2 = 1e-7 the ratio of sines loses all precision and its
    analytic limit 2l+1 is used instead.
    """
    omega = np.asarray(omega, dtype=float)
    flat = omega.reshape(-1)
    level = truncation_level(float(eps))
    half = flat / 2
    tiny = half < config.IGSO3_SMALL_HALF_ANGLE
    if np.any(tiny):
        logger.debug("IGSO(3) series: %d angles below the small angle limit, using the omega -> 0 limit", int(tiny.sum()))
    safe_sin = np.where(tiny, 1.0, np.sin(half))

    total = np.zeros_like(flat)
    for start in range(0, level + 1, _L_CHUNK):
        ls = np.arange(start, min(start + _L_CHUNK, level + 1), dtype=float)
        weight = (2 * ls + 1) * np.exp(-ls * (ls + 1) * eps)
        ratio = np.sin(np.outer(flat, ls + 0.5)) / safe_sin[:, None]
        ratio[tiny] = 2 * ls + 1
        total += ratio @ weight
    return total.reshape(omega.shape)


def igso3_density(omega: np.ndarray, eps: float) -> np.ndarray:
    """Density of the rotation angle ω ∈ [0, π].

    Integrates to 1 over [0, π]; tends to the Haar angle density
    (1 − cos ω)/π for large eps.

    :param omega: Angles in radians
    :param eps: Variance
    """
    assert eps > 0, f"IGSO(3) variance must be positive, got {eps}"
    omega = np.asarray(omega, dtype=float)
    return igso3_series(omega, eps) * (1.0 - np.cos(omega)) / np.pi


@functools.lru_cache(maxsize=64)
def igso3_cdf_table(eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """Tabulated angle CDF on a uniform 4096-bin grid over [0, π].

    Cached per eps; the returned arrays are read-only.

    :return: (omega grid, CDF values) with CDF(0) = 0 and CDF(π) = 1
    """
    grid = np.linspace(0.0, np.pi, config.IGSO3_TABLE_BINS + 1)
    pdf = np.clip(igso3_density(grid, eps), 0.0, None)
    cdf = cumulative_trapezoid(pdf, grid, initial=0.0)
    cdf = np.maximum.accumulate(cdf / cdf[-1])
    grid.setflags(write=False)
    cdf.setflags(write=False)
    return grid, cdf


def igso3_cdf(omega: np.ndarray, eps: float) -> np.ndarray:
    """Tabulated CDF of the rotation angle, linear between grid nodes."""
    grid, cdf = igso3_cdf_table(float(eps))
    return np.interp(omega, grid, cdf)


def sample_igso3_angle(eps: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw rotation angles by inverting the tabulated CDF."""
    grid, cdf = igso3_cdf_table(float(eps))
    return np.interp(rng.uniform(size=size), cdf, grid)


def sample_igso3_rotvec(eps: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw (size, 3) rotation vectors of mean-identity IGSO(3) noise.

    Below eps = 1e-5 the table cannot resolve the angle distribution and
    the tangent-space Gaussian 𝒩(0, 2·eps·I) is drawn instead.
    """
    if eps < config.IGSO3_GAUSSIAN_LIMIT_EPS:
        return rng.normal(scale=np.sqrt(2.0 * eps), size=(size, 3))
    omega = sample_igso3_angle(eps, rng, size)
    axis = rng.standard_normal((size, 3))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    return omega[:, None] * axis


def sample_igso3(p: IgSo3Params, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw rotations mean · exp(ω·axis).

    The perturbation multiplies the mean from the right, i.e. it acts in the
    mean's local frame.

    :param p: Distribution parameters; a batched (N, 3, 3) mean draws one rotation per mean
    :param rng: Random stream
    :param size: Number of draws for a single (3, 3) mean, None for one rotation
    :return: (3, 3), (size, 3, 3) or (N, 3, 3)
    """
    mean = np.asarray(p.mean, dtype=float)
    if mean.ndim == 3:
        assert size is None or size == len(mean), "size must match the batched mean"
        n = len(mean)
    else:
        n = 1 if size is None else size
    noise = so3_exp(sample_igso3_rotvec(p.eps, rng, n))
    out = mean @ noise
    if mean.ndim == 2 and size is None:
        return out[0]
    return out
