import math

import numpy as np
import pytest
from scipy.special import logit

from seamless.efficacy import (
    ControlBuffer,
    ControlRecord,
    EfficacyConfig,
    StageDecision,
    SurvivalDataset,
    assemble_analysis_set,
    cox_log_partial_likelihood,
    posterior_efficacy_probability,
    stage_decision,
    translate_boundaries,
)

TWO = SurvivalDataset([1, 0], [5.0, 28.0], [1, 0])


def test_cox_no_events_is_zero():
    d = SurvivalDataset([1, 0, 1], [28.0, 28.0, 28.0], [0, 0, 0])
    assert cox_log_partial_likelihood(d, 1.75) == 0.0
    assert cox_log_partial_likelihood(SurvivalDataset.empty(), 2.0) == 0.0


def test_cox_hand_computed():
    assert cox_log_partial_likelihood(TWO, 1.0) == pytest.approx(math.log(0.5), abs=1e-12)
    assert cox_log_partial_likelihood(TWO, 1.75) == pytest.approx(math.log(1.75 / 2.75), abs=1e-12)
    assert cox_log_partial_likelihood(TWO, 1.0) == pytest.approx(-0.6931, abs=1e-4)
    assert cox_log_partial_likelihood(TWO, 1.75) == pytest.approx(-0.4520, abs=1e-4)


def test_cox_breslow_ties():
    d = SurvivalDataset([1, 0, 0], [3.0, 3.0, 10.0], [1, 1, 0])
    hr = 2.0
    expected = math.log(hr) - 2 * math.log(hr + 2)
    assert cox_log_partial_likelihood(d, hr) == pytest.approx(expected, abs=1e-12)


def test_cox_rejects_bad_hr():
    with pytest.raises(ValueError):
        cox_log_partial_likelihood(TWO, 0.0)


def test_dataset_validation():
    with pytest.raises(ValueError):
        SurvivalDataset([1], [0.0], [1])
    with pytest.raises(ValueError):
        SurvivalDataset([1, 0], [1.0], [1, 0])


def test_posterior_efficacy_examples():
    cfg = EfficacyConfig()
    none = SurvivalDataset([1, 0], [28.0, 28.0], [0, 0])
    assert posterior_efficacy_probability(none, cfg) == 0.5
    expected = 0.5 * (1.75 / 2.75) / (0.5 * (1.75 / 2.75) + 0.5 * 0.5)
    assert posterior_efficacy_probability(TWO, cfg) == pytest.approx(expected, abs=1e-12)
    assert posterior_efficacy_probability(TWO, cfg) == pytest.approx(0.5600, abs=1e-12)
    one = EfficacyConfig(prior=1.0)
    assert posterior_efficacy_probability(TWO, one) == 1.0


def test_config_validation():
    for bad in (dict(lower=0.9, upper=0.5), dict(psi_star=0.0), dict(max_stages=0), dict(n_c=-1), dict(prior=1.5)):
        with pytest.raises(ValueError):
            EfficacyConfig(**bad)


def test_stage_decision_examples():
    cfg = EfficacyConfig(lower=0.224, upper=0.839, max_stages=11)
    assert stage_decision(0.90, 1, cfg) is StageDecision.STOP_EFFICACY
    assert stage_decision(0.10, 1, cfg) is StageDecision.STOP_FUTILITY
    assert stage_decision(0.50, 1, cfg) is StageDecision.CONTINUE
    assert stage_decision(0.50, 11, cfg) is StageDecision.STOP_FUTILITY
    assert stage_decision(0.90, 11, cfg) is StageDecision.STOP_EFFICACY
    with pytest.raises(ValueError):
        stage_decision(0.5, 12, cfg)


def test_translate_boundaries_examples():
    assert translate_boundaries(0.224, 0.839, 0.5, 0.5) == pytest.approx((0.224, 0.839), abs=1e-15)
    l, u = translate_boundaries(0.224, 0.839, 0.5, 0.6)
    assert logit(l) - logit(0.224) == pytest.approx(logit(0.6), abs=1e-12)
    assert logit(u) - logit(0.839) == pytest.approx(0.4055, abs=1e-4)
    back = translate_boundaries(l, u, 0.6, 0.5)
    assert back == pytest.approx((0.224, 0.839), abs=1e-14)
    with pytest.raises(ValueError):
        translate_boundaries(0.0, 0.8, 0.5, 0.6)


def test_translation_gives_same_decisions_on_simulated_data():
    cfg = EfficacyConfig()
    l2, u2 = translate_boundaries(cfg.lower, cfg.upper, 0.5, 0.6)
    cfg2 = EfficacyConfig(prior=0.6, lower=l2, upper=u2)
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = rng.integers(2, 40)
        d = SurvivalDataset(rng.integers(0, 2, n), rng.integers(1, 29, n).astype(float), rng.integers(0, 2, n))
        k = int(rng.integers(1, cfg.max_stages + 1))
        assert stage_decision(posterior_efficacy_probability(d, cfg), k, cfg) is \
            stage_decision(posterior_efficacy_probability(d, cfg2), k, cfg2)


def _rec(i, day):
    return ControlRecord(i, float(day), 10.0, 1)


def test_buffer_eviction_oldest_first():
    buf = ControlBuffer(30)
    for i in range(35):
        buf.push(_rec(i, i))
    ids = [r.id for r in buf.records()]
    assert len(ids) == 30 and ids == list(range(5, 35))


def test_buffer_orders_by_enrollment_day():
    buf = ControlBuffer(2)
    buf.push(_rec(1, 10))
    buf.push(_rec(2, 3))
    buf.push(_rec(3, 10))
    assert [r.id for r in buf.records()] == [1, 3]
    assert len(ControlBuffer(0)) == 0


def test_assemble_empty_buffer_is_own_data():
    own = SurvivalDataset([1, 0], [5.0, 28.0], [1, 0], [100, 101])
    out = assemble_analysis_set(own, ControlBuffer(30), 100.0)
    assert out is own


def test_assemble_deduplicates_and_requires_follow_up():
    own = SurvivalDataset([1, 0], [5.0, 28.0], [1, 0], [100, 101])
    buf = ControlBuffer(30)
    buf.push(ControlRecord(101, 0.0, 28.0, 0))
    buf.push(ControlRecord(7, 0.0, 4.0, 1))
    buf.push(ControlRecord(8, 90.0, 4.0, 1))
    out = assemble_analysis_set(own, buf, 100.0)
    assert sorted(out.ids.tolist()) == [7, 100, 101]
    assert len(set(out.ids.tolist())) == len(out)
