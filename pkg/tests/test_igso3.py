"""Isotropic Gaussian on SO(3)."""
import numpy as np
import pytest
from scipy.integrate import simpson
from scipy.stats import kstest

from backbone_refine.diffusion.igso3 import (
    IgSo3Params,
    igso3_cdf,
    igso3_density,
    igso3_series,
    sample_igso3,
    sample_igso3_rotvec,
    truncation_level,
)
from backbone_refine.geometry import rotation_angle, so3_exp
from backbone_refine.utils import make_rng

#: Composite Simpson nodes on [0, π]
GRID = np.linspace(0.0, np.pi, 2049)


@pytest.mark.parametrize("eps", [1e-3, 0.05, 0.5, 2.0, 10.0])
def test_density_normalised(eps):
    """The angle density integrates to one."""
    assert simpson(igso3_density(GRID, eps), x=GRID) == pytest.approx(1.0, abs=1e-3)


def test_haar_limit():
    """Large variance gives the uniform rotation angle density."""
    haar = (1.0 - np.cos(GRID)) / np.pi
    assert np.max(np.abs(igso3_density(GRID, 10.0) - haar)) < 1e-3


def test_small_variance_concentrates():
    """Almost all mass sits below 0.2 rad for eps = 1e-3."""
    below = GRID[GRID <= 0.2]
    assert simpson(igso3_density(below, 1e-3), x=below) >= 0.99


def test_small_angle_limit():
    """The series is finite at ω = 0 and continuous into it."""
    at_zero = igso3_series(np.array([0.0]), 0.5)[0]
    near = igso3_series(np.array([1e-5]), 0.5)[0]
    assert np.isfinite(at_zero)
    assert at_zero == pytest.approx(near, rel=1e-6)


def test_truncation_grows_as_variance_shrinks():
    """Narrower distributions need more series terms."""
    assert truncation_level(0.01) > truncation_level(0.5) > truncation_level(5.0)


def test_sampled_angles_follow_cdf():
    """Kolmogorov-Smirnov test of 10⁵ sampled angles against the tabulated CDF."""
    rotvec = sample_igso3_rotvec(0.5, make_rng(3), 100_000)
    angles = np.linalg.norm(rotvec, axis=-1)
    result = kstest(angles, lambda x: igso3_cdf(x, 0.5))
    assert result.pvalue > 0.01


def test_axes_isotropic():
    """Sampled rotation axes average out."""
    rotvec = sample_igso3_rotvec(0.5, make_rng(4), 100_000)
    axes = rotvec / np.linalg.norm(rotvec, axis=-1, keepdims=True)
    assert np.linalg.norm(axes.mean(axis=0)) < 0.01


def test_tiny_variance_stays_at_mean():
    """eps = 1e-6 barely moves away from the mean rotation."""
    mean = so3_exp(np.array([0.3, -1.2, 0.8]))
    samples = sample_igso3(IgSo3Params(eps=1e-6, mean=mean), make_rng(5), size=10_000)
    offset = rotation_angle(np.swapaxes(samples, -1, -2) @ mean)
    assert np.mean(offset < 0.01) > 0.999


def test_small_variance_matches_tangent_gaussian():
    """For small eps the rotation vector has variance close to 2·eps per axis."""
    eps = 0.01
    rotvec = sample_igso3_rotvec(eps, make_rng(6), 100_000)
    assert np.mean(np.sum(rotvec**2, axis=-1)) == pytest.approx(6 * eps, rel=0.05)


def test_batched_mean():
    """A stack of means draws one rotation per mean, applied on the right."""
    means = so3_exp(make_rng(7).normal(size=(5, 3)))
    out = sample_igso3(IgSo3Params(eps=0.2, mean=means), make_rng(8))
    assert out.shape == (5, 3, 3)
    noise = np.swapaxes(means, -1, -2) @ out
    assert np.allclose(noise @ np.swapaxes(noise, -1, -2), np.eye(3), atol=1e-9)


def test_deterministic():
    """The same stream gives the same rotations."""
    p = IgSo3Params(eps=0.5, mean=np.eye(3))
    assert np.array_equal(sample_igso3(p, make_rng(9), 4), sample_igso3(p, make_rng(9), 4))


def test_variance_must_be_positive():
    """eps = 0 is not a distribution."""
    with pytest.raises(AssertionError):
        IgSo3Params(eps=0.0, mean=np.eye(3))
