"""Variance schedules."""
import json

import numpy as np
import pytest

from backbone_refine.diffusion.schedule import (
    Channel,
    InvalidSchedule,
    InvalidTimestep,
    Schedule,
    ScheduleConfig,
    ScheduleKind,
    make_schedule,
)


def test_single_step():
    """One step of β = 0.1 leaves ᾱ = 0.9."""
    s = make_schedule("linear", 1, 0.1, 0.1)
    assert s.alpha_bar_at(1) == pytest.approx(0.9)
    assert s.alpha_bar_at(0) == 1.0
    assert s.beta_at(0) == 0.0


def test_linear_product_oracle():
    """ᾱ is the running product of 1 − β, recomputed in a plain loop."""
    s = make_schedule("linear", 100, 1e-4, 0.02)
    assert s.beta_at(1) == pytest.approx(1e-4)
    assert s.beta_at(100) == pytest.approx(0.02)
    product = 1.0
    for t in range(1, 101):
        product *= 1.0 - s.beta_at(t)
        assert s.alpha_bar_at(t) == pytest.approx(product, rel=0, abs=1e-12)
    assert np.all(np.diff(s.alpha_bar) < 0)


def test_recursion():
    """ᾱ^T = (1 − β^T)·ᾱ^{T−1}."""
    s = make_schedule("linear", 50, 1e-3, 0.05, channel="ori")
    for t in range(1, 51):
        assert s.alpha_bar_at(t) == pytest.approx(s.alpha_at(t) * s.alpha_bar_at(t - 1), rel=0, abs=1e-12)


def test_cosine_ends_near_zero():
    """The squared cosine profile drives ᾱ to almost zero."""
    s = make_schedule("cosine", 100, 1e-4, 0.05)
    assert s.kind == ScheduleKind.cosine
    assert s.alpha_bar_at(100) < 0.01
    assert np.all((s.beta >= 1e-5) & (s.beta <= 0.999))


@pytest.mark.parametrize(
    "t_max, start, end",
    [(0, 1e-4, 0.05), (10, 0.0, 0.05), (10, 0.1, 0.05), (10, 1e-4, 1.0), (10, -0.1, 0.05)],
)
def test_invalid_parameters(t_max, start, end):
    """Bad end points or lengths are rejected."""
    with pytest.raises(InvalidSchedule):
        make_schedule("linear", t_max, start, end)


def test_unknown_kind():
    """Only linear and cosine exist."""
    with pytest.raises(InvalidSchedule):
        make_schedule("sigmoid", 10, 1e-4, 0.05)


def test_timestep_range():
    """Timesteps outside [1, T_max] are refused."""
    s = make_schedule("linear", 10, 1e-4, 0.05)
    with pytest.raises(InvalidTimestep):
        s.check_timestep(0)
    with pytest.raises(InvalidTimestep):
        s.alpha_bar_at(11)


def test_json_roundtrip(tmp_path):
    """Dumped tables reload bit-exactly."""
    s = make_schedule("cosine", 64, 1e-4, 0.05, channel="ori")
    path = tmp_path / "ori.json"
    s.save(path)
    back = Schedule.load(path)
    assert back.channel == Channel.ori
    assert np.array_equal(back.beta, s.beta)
    assert np.array_equal(back.alpha_bar, s.alpha_bar)


def test_load_rejects_tampered_table(tmp_path):
    """An ᾱ column that does not match β is refused."""
    doc = make_schedule("linear", 10, 1e-4, 0.05).to_json()
    doc["alpha_bar"][3] += 1e-6
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(InvalidSchedule):
        Schedule.load(path)


def test_load_rejects_wrong_format():
    """Foreign documents are refused."""
    with pytest.raises(InvalidSchedule):
        Schedule.from_json({"format": "something-else", "version": 1})


def test_schedule_config():
    """Config builds both channels and rejects unknown keys."""
    cfg = ScheduleConfig.from_dict({"t_max": 20, "ori_beta_end": 0.1})
    pos, ori = cfg.build()
    assert pos.channel == Channel.pos and ori.channel == Channel.ori
    assert pos.n_steps == ori.n_steps == 20
    assert ori.beta_at(20) == pytest.approx(0.1)
    assert ScheduleConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidSchedule):
        ScheduleConfig.from_dict({"t_max": 20, "colour": "red"})
