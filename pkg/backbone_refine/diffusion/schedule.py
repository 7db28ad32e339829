"""Diffusion variance schedules.

A :py:class:`Schedule` is the table of per-step variances β¹..β^Tmax of
one channel (translations or orientations) and the running products
ᾱ^T = ∏(1 − β^τ). Timestep 0 is the clean structure: ᾱ⁰ = 1, β⁰ = 0.

Example:

.. code-block:: python

    from backbone_refine.diffusion.schedule import make_schedule

    pos = make_schedule("linear", 100, 1e-4, 0.05, channel="pos")
    print(pos.alpha_bar_at(50))
    pos.save("schedule-pos.json")
"""
import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from backbone_refine import config

logger = logging.getLogger(__name__)

#: Schedule JSON format tag
SCHEDULE_FORMAT = "backbone-refine-schedule"
SCHEDULE_VERSION = 1


class InvalidSchedule(Exception):
    """Schedule parameters or a loaded table violate the schedule invariants."""


class InvalidTimestep(Exception):
    """Timestep outside the range the operation accepts."""


class ScheduleKind(enum.Enum):
    """Functional form of β."""

    #: β interpolated linearly between the end points
    linear = "linear"

    #: ᾱ follows a squared cosine, β clipped
    cosine = "cosine"


class Channel(enum.Enum):
    """Which part of a frame a schedule noises."""

    pos = "pos"
    ori = "ori"


@dataclass(frozen=True, eq=False)
class Schedule:
    """Per-timestep variance table of one diffusion channel.

    Arrays are indexed from 0, so ``beta[T - 1]`` is β^T. Use
    :py:meth:`beta_at` and :py:meth:`alpha_bar_at` for 1-based access.
    """

    kind: ScheduleKind
    channel: Channel
    n_steps: int

    #: β¹..β^Tmax, each strictly in (0, 1)
    beta: np.ndarray

    #: ᾱ¹..ᾱ^Tmax, strictly decreasing
    alpha_bar: np.ndarray

    beta_start: float
    beta_end: float

    def __post_init__(self):
        for name in ("beta", "alpha_bar"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def check_timestep(self, t: int, allow_zero: bool = False):
        """:raise InvalidTimestep: If `t` is outside [1, n_steps] (or [0, n_steps])"""
        low = 0 if allow_zero else 1
        if not (low <= t <= self.n_steps) or int(t) != t:
            raise InvalidTimestep(f"Timestep {t} outside [{low}, {self.n_steps}] of the {self.channel.value} schedule")

    def beta_at(self, t: int) -> float:
        """β^t, with β⁰ = 0."""
        self.check_timestep(t, allow_zero=True)
        return 0.0 if t == 0 else float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        """α^t = 1 − β^t."""
        return 1.0 - self.beta_at(t)

    def alpha_bar_at(self, t: int) -> float:
        """ᾱ^t, with ᾱ⁰ = 1."""
        self.check_timestep(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def to_json(self) -> dict:
        """Self-describing dict, floats survive a JSON round trip bit-exactly."""
        return {
            "format": SCHEDULE_FORMAT,
            "version": SCHEDULE_VERSION,
            "kind": self.kind.value,
            "channel": self.channel.value,
            "t_max": self.n_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "beta": self.beta.tolist(),
            "alpha_bar": self.alpha_bar.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Schedule":
        """Load and re-validate a dumped schedule.

        :raise InvalidSchedule: If the document is malformed or the ᾱ column does not match the β column
        """
        if data.get("format") != SCHEDULE_FORMAT or data.get("version") != SCHEDULE_VERSION:
            raise InvalidSchedule(f"Not a version {SCHEDULE_VERSION} schedule document: {data.get('format')} {data.get('version')}")
        try:
            s = Schedule(
                kind=ScheduleKind(data["kind"]),
                channel=Channel(data["channel"]),
                n_steps=int(data["t_max"]),
                beta=np.array(data["beta"], dtype=float),
                alpha_bar=np.array(data["alpha_bar"], dtype=float),
                beta_start=float(data["beta_start"]),
                beta_end=float(data["beta_end"]),
            )
        except (KeyError, ValueError) as e:
            raise InvalidSchedule(f"Malformed schedule document: {e}") from e
        validate_schedule(s)
        return s

    def save(self, path: Union[str, Path]):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")
        logger.info("Wrote %s schedule to %s", self.channel.value, path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Schedule":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as e:
            raise InvalidSchedule(f"Cannot read schedule {path}: {e}") from e
        return cls.from_json(data)


def validate_schedule(s: Schedule):
    """Check the schedule invariants.

    :raise InvalidSchedule: On any violation
    """
    if s.n_steps < 1 or s.beta.shape != (s.n_steps,) or s.alpha_bar.shape != (s.n_steps,):
        raise InvalidSchedule(f"Schedule tables do not have {s.n_steps} entries")
    if not np.all((s.beta > 0) & (s.beta < 1)):
        raise InvalidSchedule("Every beta must be strictly inside (0, 1)")
    expected = np.cumprod(1.0 - s.beta)
    if not np.allclose(s.alpha_bar, expected, rtol=0, atol=1e-12):
        raise InvalidSchedule("alpha_bar is not the running product of 1 - beta")
    if np.any(np.diff(s.alpha_bar) >= 0):
        raise InvalidSchedule("alpha_bar must be strictly decreasing")


def _cosine_betas(t_max: int) -> np.ndarray:
    s = config.COSINE_OFFSET
    steps = np.arange(t_max + 1) / t_max
    f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
    betas = 1.0 - f[1:] / f[:-1]
    low, high = config.COSINE_BETA_CLIP
    return np.clip(betas, low, high)


def make_schedule(
    kind: Union[ScheduleKind, str] = config.DEFAULT_SCHEDULE_KIND,
    t_max: int = config.DEFAULT_T_MAX,
    beta_start: float = config.DEFAULT_BETA_START,
    beta_end: float = config.DEFAULT_BETA_END,
    channel: Union[Channel, str] = Channel.pos,
) -> Schedule:
    """Build a variance schedule.

    - ``linear``: β interpolates `beta_start` to `beta_end`

    - ``cosine``: ᾱ follows cos²((T/Tmax + s)/(1 + s)·π/2) with s = 0.008,
      β clipped to (1e-5, 0.999); the β end points are recorded but do not
      shape the curve

    ᾱ is always the running product of 1 − β.

    :raise InvalidSchedule: Unless 0 < beta_start ≤ beta_end < 1 and t_max ≥ 1
    """
    try:
        kind = ScheduleKind(kind)
        channel = Channel(channel)
    except ValueError as e:
        raise InvalidSchedule(str(e)) from e
    if int(t_max) != t_max or t_max < 1:
        raise InvalidSchedule(f"T_max must be a positive integer, got {t_max}")
    if not (0 < beta_start <= beta_end < 1):
        raise InvalidSchedule(f"Need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    t_max = int(t_max)

    if kind == ScheduleKind.linear:
        beta = np.linspace(beta_start, beta_end, t_max)
    else:
        beta = _cosine_betas(t_max)

    s = Schedule(
        kind=kind,
        channel=channel,
        n_steps=t_max,
        beta=beta,
        alpha_bar=np.cumprod(1.0 - beta),
        beta_start=float(beta_start),
        beta_end=float(beta_end),
    )
    validate_schedule(s)
    logger.debug("Built %s %s schedule, T_max=%d, final alpha_bar %g", kind.value, channel.value, t_max, s.alpha_bar[-1])
    return s


@dataclass
class ScheduleConfig:
    """Schedule parameters of both channels, as they appear in run configs."""

    t_max: int = config.DEFAULT_T_MAX
    pos_kind: str = config.DEFAULT_SCHEDULE_KIND
    pos_beta_start: float = config.DEFAULT_BETA_START
    pos_beta_end: float = config.DEFAULT_BETA_END
    ori_kind: str = config.DEFAULT_SCHEDULE_KIND
    ori_beta_start: float = config.DEFAULT_BETA_START
    ori_beta_end: float = config.DEFAULT_BETA_END

    def build(self) -> Tuple[Schedule, Schedule]:
        """(pos, ori) schedules sharing T_max."""
        pos = make_schedule(self.pos_kind, self.t_max, self.pos_beta_start, self.pos_beta_end, Channel.pos)
        ori = make_schedule(self.ori_kind, self.t_max, self.ori_beta_start, self.ori_beta_end, Channel.ori)
        return pos, ori

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScheduleConfig":
        """:raise InvalidSchedule: On unknown keys"""
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidSchedule(f"Unknown schedule config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScheduleConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as e:
            raise InvalidSchedule(f"Cannot read schedule config {path}: {e}") from e
        return cls.from_dict(data)
