"""Forward diffusion of residue frames.

Translations (CA positions) follow the Gaussian DDPM marginal

.. code-block:: text

    t^T = √ᾱ^T · t⁰ + √(1 − ᾱ^T) · ε,    ε ~ 𝒩(0, I)

on coordinates centred on the mean CA position, so the process shrinks
the internal geometry instead of pulling the chain towards the origin.
Orientations are drawn from an isotropic Gaussian on SO(3) around the
geodesically shrunk clean orientation exp(√ᾱ^T · log 𝒪⁰) with variance
1 − ᾱ^T.

Every draw is kept in a :py:class:`NoiseRecord`, so a corruption can be
replayed bit-exactly and the translation noise serves as the target of
the score-matching loss.

Example:

.. code-block:: python

    pos, ori = ScheduleConfig().build()
    frames = frames_from_backbone(reference)
    noisy, record = corrupt(frames, 50, pos, ori, make_rng(seed, 0))
    assert np.array_equal(apply_noise(frames, record, pos, ori).trans, noisy.trans)
"""
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from backbone_refine import config
from backbone_refine.diffusion.igso3 import sample_igso3_rotvec
from backbone_refine.diffusion.schedule import Channel, InvalidSchedule, InvalidTimestep, Schedule
from backbone_refine.geometry import FrameSet, geodesic_flow, so3_exp

logger = logging.getLogger(__name__)

NOISE_RECORD_FORMAT = "backbone-refine-noise-record"
NOISE_RECORD_VERSION = 1


@dataclass(frozen=True, eq=False)
class NoiseRecord:
    """Everything drawn while corrupting one structure."""

    #: (N_res, 3) standard normal translation noise εⱼ
    eps: np.ndarray

    #: (N_res, 3, 3) orientation perturbations, right-multiplied onto the shrunk mean
    rot_noise: np.ndarray

    #: Diffusion timestep T, 1..T_max
    timestep: int

    #: (3,) mean CA position of the clean structure
    center: np.ndarray

    def __post_init__(self):
        for name in ("eps", "rot_noise", "center"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        n = len(self.eps)
        assert self.eps.shape == (n, 3), f"Bad noise shape {self.eps.shape}"
        assert self.rot_noise.shape == (n, 3, 3), f"Bad rotation noise shape {self.rot_noise.shape}"
        if self.timestep < 1:
            raise InvalidTimestep(f"Noise record timestep must be >= 1, got {self.timestep}")

    def __len__(self) -> int:
        return len(self.eps)

    def to_dict(self) -> dict:
        return {
            "format": NOISE_RECORD_FORMAT,
            "version": NOISE_RECORD_VERSION,
            "timestep": int(self.timestep),
            "center": self.center.tolist(),
            "eps": self.eps.tolist(),
            "rot_noise": self.rot_noise.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseRecord":
        assert data.get("format") == NOISE_RECORD_FORMAT, f"Not a noise record: {data.get('format')}"
        assert data.get("version") == NOISE_RECORD_VERSION, f"Unsupported noise record version {data.get('version')}"
        return NoiseRecord(
            eps=np.array(data["eps"], dtype=float).reshape(-1, 3),
            rot_noise=np.array(data["rot_noise"], dtype=float).reshape(-1, 3, 3),
            timestep=int(data["timestep"]),
            center=np.array(data["center"], dtype=float),
        )

    def save(self, path: Union[str, Path]):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NoiseRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_channel(s: Schedule, channel: Channel):
    assert s.channel == channel, f"Expected a {channel.value} schedule, got {s.channel.value}"


def diffuse_translations(t0: np.ndarray, t: int, s: Schedule, noise: np.ndarray) -> np.ndarray:
    """Closed-form marginal √ᾱ·t⁰ + √(1−ᾱ)·ε.

    Coordinates are used as given; centring is the caller's job
    (see :py:func:`apply_noise`).

    :param t0: (N, 3) clean translations
    :param t: Timestep
    :param s: Translation schedule
    :param noise: (N, 3) standard normal draws
    """
    _check_channel(s, Channel.pos)
    s.check_timestep(t)
    t0 = np.asarray(t0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    assert t0.shape == noise.shape, f"Translations {t0.shape} and noise {noise.shape} differ in shape"
    alpha_bar = s.alpha_bar_at(t)
    return math.sqrt(alpha_bar) * t0 + math.sqrt(1.0 - alpha_bar) * noise


def diffuse_translations_stepwise(t0: np.ndarray, t: int, s: Schedule, rng: np.random.Generator) -> np.ndarray:
    """Run the per-step kernel 𝒩(√(1−β^τ)·x, β^τ·I) for τ = 1..t.

    Agrees in distribution with :py:func:`diffuse_translations`.
    """
    _check_channel(s, Channel.pos)
    s.check_timestep(t)
    x = np.array(t0, dtype=float)
    for tau in range(1, t + 1):
        beta = s.beta_at(tau)
        x = math.sqrt(1.0 - beta) * x + math.sqrt(beta) * rng.standard_normal(x.shape)
    return x


def orientation_mean(rot0: np.ndarray, t: int, s: Schedule) -> np.ndarray:
    """Shrunk clean orientations exp(√ᾱ^T · log 𝒪⁰)."""
    _check_channel(s, Channel.ori)
    s.check_timestep(t, allow_zero=True)
    return geodesic_flow(math.sqrt(s.alpha_bar_at(t)), rot0)


def _check_pair(s_pos: Schedule, s_ori: Schedule, t: int):
    if s_pos.n_steps != s_ori.n_steps:
        raise InvalidSchedule(f"Translation and orientation schedules differ in T_max: {s_pos.n_steps} vs {s_ori.n_steps}")
    s_pos.check_timestep(t)


def draw_noise(p0: FrameSet, t: int, s_pos: Schedule, s_ori: Schedule, rng: np.random.Generator) -> NoiseRecord:
    """Draw translation and orientation noise for every residue.

    Translation noise is drawn first, then orientation noise, both in
    residue order.
    """
    _check_pair(s_pos, s_ori, t)
    n = len(p0)
    eps = rng.standard_normal((n, 3))
    rotvec = sample_igso3_rotvec(1.0 - s_ori.alpha_bar_at(t), rng, n)
    return NoiseRecord(eps=eps, rot_noise=so3_exp(rotvec), timestep=t, center=p0.trans.mean(axis=0))


def apply_noise(
    p0: FrameSet,
    record: NoiseRecord,
    s_pos: Schedule,
    s_ori: Schedule,
    scale: float = config.TRANSLATION_SCALE,
) -> FrameSet:
    """Corrupt frames with previously drawn noise.

    Deterministic: the same record always gives the same frames. The
    centring offset is recomputed from `p0`, so translating the input
    translates the output.

    :param scale: Coordinates are divided by this before noising and multiplied back after
    """
    _check_pair(s_pos, s_ori, record.timestep)
    assert len(record) == len(p0), f"Noise record for {len(record)} residues, frames {len(p0)}"
    t = record.timestep
    center = p0.trans.mean(axis=0)
    trans = center + scale * diffuse_translations((p0.trans - center) / scale, t, s_pos, record.eps)
    rot = orientation_mean(p0.rot, t, s_ori) @ record.rot_noise
    return FrameSet(rot, trans)


def corrupt(
    p0: FrameSet,
    t: int,
    s_pos: Schedule,
    s_ori: Schedule,
    rng: np.random.Generator,
    scale: float = config.TRANSLATION_SCALE,
) -> Tuple[FrameSet, NoiseRecord]:
    """Sample 𝒫^T from the forward process.

    The caller picks the timestep, typically uniformly from [1, T_max].

    :return: Corrupted frames and the noise that produced them
    :raise InvalidTimestep: If `t` is outside [1, T_max]
    :raise InvalidSchedule: If the schedules differ in T_max
    """
    record = draw_noise(p0, t, s_pos, s_ori, rng)
    noisy = apply_noise(p0, record, s_pos, s_ori, scale)
    logger.debug("Corrupted %d residues at T=%d", len(p0), t)
    return noisy, record


def implied_noise(
    x_t: np.ndarray,
    x0_hat: np.ndarray,
    t: int,
    s_pos: Schedule,
    center: Optional[np.ndarray] = None,
    scale: float = config.TRANSLATION_SCALE,
) -> np.ndarray:
    """Translation noise implied by a denoised estimate.

    Inverts the closed-form marginal in centred coordinates:
    ε̂ = ((x^T − c) − √ᾱ·(x̂⁰ − c)) / √(1 − ᾱ).

    :param x_t: (N, 3) noisy translations
    :param x0_hat: (N, 3) denoised translations
    :param center: Centring offset, default the mean of `x0_hat`
    """
    _check_channel(s_pos, Channel.pos)
    s_pos.check_timestep(t)
    x_t = np.asarray(x_t, dtype=float)
    x0_hat = np.asarray(x0_hat, dtype=float)
    if center is None:
        center = x0_hat.mean(axis=0)
    alpha_bar = s_pos.alpha_bar_at(t)
    return ((x_t - center) - math.sqrt(alpha_bar) * (x0_hat - center)) / (scale * math.sqrt(1.0 - alpha_bar))
