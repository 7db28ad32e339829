"""Forward diffusion of residue frames."""
import numpy as np
import pytest

from backbone_refine.diffusion.forward import (
    NoiseRecord,
    apply_noise,
    corrupt,
    diffuse_translations,
    diffuse_translations_stepwise,
    implied_noise,
    orientation_mean,
)
from backbone_refine.diffusion.schedule import InvalidSchedule, InvalidTimestep, make_schedule
from backbone_refine.geometry import FrameSet, atom_coords_from_frames, frames_from_backbone
from backbone_refine.losses import fape_local_mse
from backbone_refine.synthetic import make_synthetic
from backbone_refine.utils import make_rng


@pytest.fixture(scope="module")
def schedules():
    """Default-shaped pos and ori schedules."""
    return (
        make_schedule("linear", 100, 1e-4, 0.05, channel="pos"),
        make_schedule("linear", 100, 1e-4, 0.05, channel="ori"),
    )


@pytest.fixture(scope="module")
def helix() -> FrameSet:
    """Frames of a 32 residue helix."""
    return frames_from_backbone(make_synthetic("helix", 32, rng_seed=1))


def frame_fape(a: FrameSet, b: FrameSet) -> float:
    return fape_local_mse(a, atom_coords_from_frames(a), b, atom_coords_from_frames(b))


def test_closed_form_hand_case():
    """ᾱ = 0.25 halves a noiseless translation."""
    s = make_schedule("linear", 1, 0.75, 0.75)
    out = diffuse_translations(np.array([[4.0, 0.0, 0.0]]), 1, s, np.zeros((1, 3)))
    assert out.tolist() == pytest.approx([[2.0, 0.0, 0.0]])


def test_vanishing_noise_is_identity():
    """ᾱ ≈ 1 leaves translations in place."""
    s = make_schedule("linear", 1, 1e-14, 1e-14)
    t0 = np.array([[1.0, 2.0, 3.0], [-4.0, 5.0, 6.0]])
    out = diffuse_translations(t0, 1, s, make_rng(0).standard_normal((2, 3)))
    assert np.allclose(out, t0, atol=1e-6)


@pytest.mark.parametrize("t", [1, 10, 100])
def test_stepwise_matches_closed_form(schedules, t):
    """Iterating the one-step kernel reproduces the closed-form mean and variance."""
    s_pos, _ = schedules
    n = 100_000
    t0 = np.tile([1.0, -2.0, 0.5], (n, 1))
    x = diffuse_translations_stepwise(t0, t, s_pos, make_rng(1, t))
    alpha_bar = s_pos.alpha_bar_at(t)
    residual = x - np.sqrt(alpha_bar) * t0
    assert np.allclose(residual.mean(axis=0), 0.0, atol=0.02 * max(1.0, np.sqrt(1 - alpha_bar)))
    assert residual.var(axis=0) == pytest.approx([1 - alpha_bar] * 3, rel=0.02)


def test_closed_form_statistics(schedules):
    """Monte-Carlo moments of the closed-form marginal."""
    s_pos, _ = schedules
    n = 100_000
    t0 = np.tile([3.0, 0.0, -1.0], (n, 1))
    noise = make_rng(2).standard_normal((n, 3))
    x = diffuse_translations(t0, 50, s_pos, noise)
    alpha_bar = s_pos.alpha_bar_at(50)
    residual = x - np.sqrt(alpha_bar) * t0
    assert np.allclose(residual.mean(axis=0), 0.0, atol=0.02)
    assert residual.var(axis=0) == pytest.approx([1 - alpha_bar] * 3, rel=0.02)


def test_channel_checked(schedules):
    """Orientation schedules cannot noise translations."""
    _, s_ori = schedules
    with pytest.raises(AssertionError):
        diffuse_translations(np.zeros((1, 3)), 1, s_ori, np.zeros((1, 3)))


def test_orientation_mean_at_zero(schedules, helix):
    """At T = 0 the shrunk mean is the clean orientation."""
    _, s_ori = schedules
    assert np.allclose(orientation_mean(helix.rot, 0, s_ori), helix.rot, atol=1e-12)


def test_replay_bit_exact(schedules, helix, tmp_path):
    """A saved noise record reproduces the corrupted frames exactly."""
    s_pos, s_ori = schedules
    noisy, record = corrupt(helix, 40, s_pos, s_ori, make_rng(3))
    path = tmp_path / "noise.json"
    record.save(path)
    again = apply_noise(helix, NoiseRecord.load(path), s_pos, s_ori)
    assert np.array_equal(again.rot, noisy.rot)
    assert np.array_equal(again.trans, noisy.trans)
    assert record.timestep == 40
    assert len(record) == len(helix)


def test_same_stream_same_corruption(schedules, helix):
    """Corruption is a pure function of the random stream."""
    s_pos, s_ori = schedules
    a, _ = corrupt(helix, 70, s_pos, s_ori, make_rng(4))
    b, _ = corrupt(helix, 70, s_pos, s_ori, make_rng(4))
    assert np.array_equal(a.trans, b.trans)


def test_low_noise_boundary(helix):
    """Schedules with ᾱ ≈ 1 barely move the frames."""
    s_pos = make_schedule("linear", 10, 1e-10, 1e-10, channel="pos")
    s_ori = make_schedule("linear", 10, 1e-10, 1e-10, channel="ori")
    noisy, _ = corrupt(helix, 1, s_pos, s_ori, make_rng(5))
    assert frame_fape(noisy, helix) < 1e-3


def test_mid_schedule_corruption_increases_error(schedules, helix):
    """Corrupting at T = 50 moves the frames away from the reference."""
    s_pos, s_ori = schedules
    increases = sum(frame_fape(corrupt(helix, 50, s_pos, s_ori, make_rng(6, seed))[0], helix) > 1e-6 for seed in range(100))
    assert increases >= 99


def test_translation_equivariance(schedules, helix):
    """Shifting the input shifts the output, given the same noise."""
    s_pos, s_ori = schedules
    _, record = corrupt(helix, 30, s_pos, s_ori, make_rng(7))
    shift = np.array([10.0, -3.0, 7.5])
    moved = FrameSet(helix.rot, helix.trans + shift)
    a = apply_noise(helix, record, s_pos, s_ori)
    b = apply_noise(moved, record, s_pos, s_ori)
    assert np.allclose(b.trans, a.trans + shift, atol=1e-9)
    assert np.allclose(b.rot, a.rot, atol=1e-12)


def test_implied_noise_recovers_draw(schedules, helix):
    """Inverting the marginal with the clean translations gives back ε."""
    s_pos, s_ori = schedules
    noisy, record = corrupt(helix, 60, s_pos, s_ori, make_rng(8))
    eps = implied_noise(noisy.trans, helix.trans, 60, s_pos, center=record.center)
    assert np.allclose(eps, record.eps, atol=1e-9)


def test_scaled_translations(schedules, helix):
    """With a coordinate scale the noise magnitude scales too."""
    s_pos, s_ori = schedules
    _, record = corrupt(helix, 60, s_pos, s_ori, make_rng(9))
    noisy = apply_noise(helix, record, s_pos, s_ori, scale=10.0)
    eps = implied_noise(noisy.trans, helix.trans, 60, s_pos, center=record.center, scale=10.0)
    assert np.allclose(eps, record.eps, atol=1e-9)


def test_timestep_and_schedule_checks(schedules, helix):
    """Timesteps must be in range and schedules must agree on T_max."""
    s_pos, s_ori = schedules
    with pytest.raises(InvalidTimestep):
        corrupt(helix, 0, s_pos, s_ori, make_rng(10))
    with pytest.raises(InvalidTimestep):
        corrupt(helix, 101, s_pos, s_ori, make_rng(10))
    short = make_schedule("linear", 50, 1e-4, 0.05, channel="ori")
    with pytest.raises(InvalidSchedule):
        corrupt(helix, 10, s_pos, short, make_rng(10))
