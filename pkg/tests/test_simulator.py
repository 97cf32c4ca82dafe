import math

import numpy as np
import pytest

from dmpfeedback.errors import ValidationError
from dmpfeedback.feedback import extract_coupling_target
from dmpfeedback.pipeline import _segment_all, slice_stage
from dmpfeedback.primitives import segment_zvc
from dmpfeedback.simulator import (
    TINY_PROFILE,
    BoardSetting,
    build_contact_model,
    closed_loop_unroll,
    generate_corrected_demos,
    generate_nominal_demos,
    roll_of,
)


# ---------------------------------------------------------------------------
# contact model

def test_contact_model_deterministic():
    a = build_contact_model(16, seed=5)
    b = build_contact_model(16, seed=5)
    assert np.array_equal(a.sensitivity, b.sensitivity)
    assert np.array_equal(a.roll_gain, b.roll_gain)
    assert np.array_equal(a.baseline_phase, b.baseline_phase)


def test_contact_model_learnable_signal_fraction():
    for seed in range(8):
        model = build_contact_model(38, seed=seed)
        norms = np.linalg.norm(model.sensitivity, axis=1)
        frac = np.mean(norms > 0.5 * norms.max())
        assert frac >= 0.25


def test_contact_model_linear_in_misalignment():
    model = build_contact_model(10, seed=1)
    delta = np.array([0.05, 0.1])
    ddot = np.array([0.2, -0.1])
    lin1 = model.response(delta, ddot, np.zeros(2)) \
        - np.outer(np.tanh(delta), model.tanh_gain)
    lin2 = model.response(2 * delta, 2 * ddot, np.zeros(2)) \
        - np.outer(np.tanh(2 * delta), model.tanh_gain)
    assert np.allclose(lin2, 2 * lin1)


def test_contact_model_zero_misalignment_zero_mean(tiny_corpus):
    corpus, contact = tiny_corpus
    # nominal demos: deviation from the noise-free construction is pure noise
    from dmpfeedback.simulator import _contact_signals

    profile = TINY_PROFILE
    w, progress = _contact_signals(profile, profile.n_samples)
    residuals = []
    for demo in corpus[0.0]:
        t = demo.position.t
        baseline = contact.nominal_profile(w, progress)
        clean = np.empty_like(demo.tactile.values)
        for j in range(profile.n_channels):
            clean[:, j] = np.interp(demo.tactile.t, t, baseline[:, j])
        residuals.append(demo.tactile.values - clean)
    resid = np.concatenate(residuals)
    # zero correction at the nominal setting leaves noise only
    assert abs(resid.mean()) < 4 * contact.noise_sigma / math.sqrt(resid.size)
    assert resid.std() == pytest.approx(contact.noise_sigma, rel=0.1)


def test_contact_model_validation():
    with pytest.raises(ValidationError):
        build_contact_model(0, seed=0)


# ---------------------------------------------------------------------------
# demo generation

def test_demos_bit_identical_across_regeneration():
    a = generate_nominal_demos(3, seed=9, profile=TINY_PROFILE)
    b = generate_nominal_demos(3, seed=9, profile=TINY_PROFILE)
    for da, db in zip(a, b):
        assert np.array_equal(da.tactile.values, db.tactile.values)
        assert np.array_equal(da.orientation.quat, db.orientation.quat)
        assert np.array_equal(da.position.pos, db.position.pos)


def test_nominal_demo_segmentation_matches_construction():
    demos = generate_nominal_demos(4, seed=11, profile=TINY_PROFILE)
    n1, n2, _ = TINY_PROFILE.boundaries
    for demo in demos:
        seg = segment_zvc(demo.position)
        assert abs(seg.end_descend - n1) <= 2
        assert abs(seg.start_slide - n2) <= 2


def test_nominal_demo_terminal_orientation_flat():
    for demo in generate_nominal_demos(3, seed=12, profile=TINY_PROFILE):
        assert abs(roll_of(demo.orientation.quat[-1])) < 1e-3


def test_corrected_demo_at_zero_setting_is_nominal():
    nominal = generate_nominal_demos(2, seed=13, profile=TINY_PROFILE)
    corrected = generate_corrected_demos(BoardSetting(0.0), 2, seed=13,
                                         profile=TINY_PROFILE)
    for a, b in zip(nominal, corrected):
        assert np.array_equal(a.orientation.quat, b.orientation.quat)
        assert np.array_equal(a.tactile.values, b.tactile.values)


def test_corrected_demo_terminal_roll_within_jitter():
    setting = BoardSetting(10.0)
    demos = generate_corrected_demos(setting, 6, seed=14, profile=TINY_PROFILE)
    for demo in demos:
        terminal = math.degrees(roll_of(demo.orientation.quat[-1]))
        assert abs(terminal - 10.0) <= 10.0 * TINY_PROFILE.jitter + 1e-6


def test_coupling_targets_ordered_by_setting(tiny_corpus, tiny_behavior):
    corpus, _ = tiny_corpus
    behavior, _ = tiny_behavior
    stage = behavior.stage(2)
    magnitudes = {}
    for deg in sorted(corpus):
        demo = corpus[deg][0]
        seg = _segment_all([demo])[0]
        ori, _, _ = slice_stage(demo, seg, 2, stage.n_steps, stage.dt)
        c = extract_coupling_target(ori, stage.orientation)
        magnitudes[deg] = np.abs(c).mean()
    degs = sorted(magnitudes)
    for lo, hi in zip(degs, degs[1:]):
        assert magnitudes[lo] < magnitudes[hi]


def test_board_setting_limits():
    with pytest.raises(ValidationError):
        BoardSetting(25.0)
    with pytest.raises(ValidationError):
        BoardSetting(5.0, pitch_deg=1.0)


# ---------------------------------------------------------------------------
# closed loop

def test_open_loop_error_matches_setting(tiny_corpus, tiny_behavior):
    _, contact = tiny_corpus
    behavior, _ = tiny_behavior
    res = closed_loop_unroll(behavior, {}, contact, BoardSetting(10.0), seed=1,
                             coupling_enabled=False)
    assert res.final_roll_error_deg == pytest.approx(10.0, abs=0.5)
    assert np.all(res.coupling == 0.0)


def test_zero_weight_model_behaves_open_loop(tiny_corpus, tiny_behavior):
    _, contact = tiny_corpus
    behavior, _ = tiny_behavior
    from dmpfeedback.training import ArchSpec, build_feedback_model
    from dmpfeedback.simulator import ROLL_AXIS

    # an untrained (zeroed) model applies no correction
    import dmpfeedback.pipeline as pl
    corpus, _ = tiny_corpus
    ds = pl.extract_coupling_datasets(corpus, behavior)[2]
    from dmpfeedback.training import split_dataset
    splits = split_dataset(ds, 0, seed=0)
    model = build_feedback_model(ArchSpec("pmnn", (10,)), splits["train"],
                                 behavior.stage(2).orientation.bank,
                                 np.random.default_rng(0))
    model.coupling_axes = [ROLL_AXIS]
    for p in model.nets[0].parameters():
        p[...] = 0.0
    res = closed_loop_unroll(behavior, {2: model, 3: model}, contact,
                             BoardSetting(10.0), seed=1)
    assert res.final_roll_error_deg == pytest.approx(10.0, abs=0.5)


def test_closed_loop_coupling_zero_at_start(tiny_corpus, tiny_behavior):
    _, contact = tiny_corpus
    behavior, _ = tiny_behavior
    res = closed_loop_unroll(behavior, {}, contact, BoardSetting(5.0), seed=2,
                             coupling_enabled=False)
    assert np.all(res.coupling[0] == 0.0)
    assert len(res.stage_bounds) == 3
