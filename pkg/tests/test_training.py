import math

import numpy as np
import pytest

from qru.cell import init_params, preset
from qru.errors import ConfigError, DivergenceError, InputError
from qru.gradients import Batch, batch_loss
from qru.losses import LossSpec
from qru.training import (
    AdamState,
    RelativeDecrease,
    ScheduleDecision,
    StopReason,
    TrainingConfig,
    ValidationPlateau,
    adam_step,
    early_stop_check,
    lr_schedule_check,
    stop_rule_from_dict,
    stop_rule_to_dict,
    train,
)

HALVE, CONTINUE = ScheduleDecision.HALVE_AND_REVERT, ScheduleDecision.CONTINUE


# -- Adam -------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    cfg = TrainingConfig()
    state = AdamState(np.zeros(2), np.array([0.04, 0.01]), 5)
    p, new = adam_step(np.array([1.0, 2.0]), np.zeros(2), state, cfg)
    np.testing.assert_array_equal(p, [1.0, 2.0])
    np.testing.assert_allclose(new.m, 0.9 * state.m)
    np.testing.assert_allclose(new.v, 0.999 * state.v)
    assert new.t == 6


def test_adam_first_step_values():
    p, _ = adam_step(np.array([0.1, 0.2, 0.3]), np.array([0.5, -2.0, 1e-3]), AdamState.zeros(3), TrainingConfig())
    np.testing.assert_allclose(p, [0.090000000199999996, 0.20999999995000000025, 0.29000009999900001], rtol=0, atol=1e-16)


def test_adam_is_stateful():
    cfg = TrainingConfig()
    g = np.array([0.3, -0.2])
    p1, s1 = adam_step(np.zeros(2), g, AdamState.zeros(2), cfg)
    p2, _ = adam_step(p1, g, s1, cfg)
    p_fresh, _ = adam_step(p1, g, AdamState.zeros(2), cfg)
    assert not np.array_equal(p2, p_fresh)


def test_adam_does_not_mutate_and_checks_shapes():
    params, grad, state = np.ones(2), np.ones(2), AdamState.zeros(2)
    adam_step(params, grad, state, TrainingConfig())
    np.testing.assert_array_equal(params, 1.0)
    np.testing.assert_array_equal(state.m, 0.0)
    with pytest.raises(InputError):
        adam_step(np.ones(3), np.ones(2), state, TrainingConfig())


# -- learning-rate schedule --------------------------------------------------

@pytest.mark.parametrize("recordings,expected", [
    ([1.0, 1.1, 1.2, 1.3], HALVE),
    ([1.0, 1.1, 0.9, 1.2], CONTINUE),
    ([1.0, 1.1, 1.2], CONTINUE),
    ([], CONTINUE),
    ([1.0, 1.0, 1.1, 1.2], CONTINUE),       # tie with the reference is not an increase
    ([1.0, 1.2, 1.1, 1.05], HALVE),         # all three above the reference, not monotone
    ([0.5, 1.0, 1.1, 1.2, 1.3], HALVE),     # only the last four count
    ([1.0, 1.1, 1.2, 1.3, 0.9], CONTINUE),
])
def test_lr_schedule_check(recordings, expected):
    assert lr_schedule_check(recordings) is expected


def test_lr_schedule_accepts_epoch_pairs():
    assert lr_schedule_check([(10, 1.0), (20, 1.1), (30, 1.2), (40, 1.3)]) is HALVE


# -- early stopping ----------------------------------------------------------

def test_relative_decrease_half_percent_stops():
    r = [1.0]
    for _ in range(3):
        r.append(r[-1] * 0.995)
    assert early_stop_check(r, RelativeDecrease())


@pytest.mark.parametrize("recordings,stop", [
    ([1.0, 0.995, 0.99], False),                       # only two drops recorded
    ([1.0, 0.98, 0.975, 0.97], False),                 # first drop of 2% breaks the streak
    ([1.0, 0.99, 0.9801, 0.970299], False),            # exactly 1% is not below the threshold
    ([1.0, 1.01, 1.02, 1.03], True),                   # increases count as small decreases
    ([2.0, 1.0, 0.999, 0.998, 0.997], True),
])
def test_relative_decrease_boundaries(recordings, stop):
    assert early_stop_check(recordings, RelativeDecrease(0.01, 3)) is stop


def test_plateau_rule():
    rule = ValidationPlateau(10)
    assert early_stop_check([0.7] * 10, rule)
    assert not early_stop_check([0.7] * 9, rule)
    assert not early_stop_check(list(np.linspace(1.0, 0.5, 40)), rule)
    # one improvement inside the window keeps training alive
    assert not early_stop_check([0.7] * 9 + [0.69], rule)
    assert early_stop_check([0.5, 0.7, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6], rule)


def test_no_rule_never_stops():
    assert not early_stop_check([1.0] * 50, None)


def test_stop_rule_round_trip():
    for rule in (RelativeDecrease(0.02, 4), ValidationPlateau(7), None):
        assert stop_rule_from_dict(stop_rule_to_dict(rule)) == rule
    with pytest.raises(ConfigError):
        stop_rule_from_dict({"kind": "patience"})
    with pytest.raises(ConfigError):
        RelativeDecrease(threshold=0)
    with pytest.raises(ConfigError):
        ValidationPlateau(1)


# -- config ------------------------------------------------------------------

def test_training_config_defaults_and_round_trip():
    cfg = TrainingConfig()
    assert (cfg.learning_rate, cfg.adam_betas, cfg.adam_epsilon) == (0.01, (0.9, 0.999), 1e-8)
    assert TrainingConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainingConfig.from_dict({"momentum": 0.9})


@pytest.mark.parametrize("kwargs", [
    dict(learning_rate=0), dict(adam_betas=(0.9, 1.0)), dict(adam_epsilon=0), dict(batch_size=0),
    dict(record_interval=0), dict(max_epochs=-1), dict(init_spread=0),
])
def test_training_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainingConfig(**kwargs)


# -- training loop -----------------------------------------------------------

def _toy(rng):
    arch = preset("s2")
    x = rng.uniform(0, 1, (12, 4, 1))
    y = (x[:, :, 0].mean(axis=1) > 0.5).astype(float)
    return arch, Batch(x, y, "final"), LossSpec("bce")


def test_zero_epochs_returns_initial_params(rng):
    arch, data, spec = _toy(rng)
    cfg = TrainingConfig(max_epochs=0, seed=3)
    params, trace = train(arch, data, spec, cfg)
    np.testing.assert_array_equal(params.values, init_params(arch, np.random.default_rng(3), spread=cfg.init_spread))
    assert trace.recorded_losses == [] and trace.stop_reason is StopReason.NOT_STARTED


def test_training_reduces_loss_and_is_deterministic(rng):
    arch, data, spec = _toy(rng)
    cfg = TrainingConfig(max_epochs=40, batch_size=4, record_interval=5, seed=1, learning_rate=0.05,
                         early_stop_rule=None)
    p1, t1 = train(arch, data, spec, cfg)
    p2, t2 = train(arch, data, spec, cfg)
    np.testing.assert_array_equal(p1.values, p2.values)
    assert t1.to_dict() == t2.to_dict()
    start = batch_loss(arch, init_params(arch, np.random.default_rng(1), spread=cfg.init_spread), data, spec)
    assert t1.best_loss < start
    assert t1.best_loss == min(l for _, l in t1.recorded_losses)
    assert t1.stop_reason is StopReason.MAX_EPOCHS and t1.epochs_run == 40
    assert batch_loss(arch, p1, data, spec) == pytest.approx(t1.best_loss, abs=1e-14)


def test_halving_reverts_to_best(rng, monkeypatch):
    import qru.training as tr

    arch, data, spec = _toy(rng)
    # force rising recorded losses so the schedule fires at the 4th recording
    fake = iter([1.0, 1.1, 1.2, 1.3] + [0.5 - 0.1 * k for k in range(20)])
    monkeypatch.setattr(tr, "batch_loss", lambda *a, **k: next(fake))
    cfg = TrainingConfig(max_epochs=8, record_interval=1, batch_size=12, early_stop_rule=None)
    _, trace = tr.train(arch, data, spec, cfg)
    assert trace.lr_events == [(4, 0.005)]
    assert trace.reversion_events == [4]
    assert trace.best_epoch == 8


def test_halving_window_does_not_refire(rng, monkeypatch):
    import qru.training as tr

    arch, data, spec = _toy(rng)
    fake = iter([1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7])
    monkeypatch.setattr(tr, "batch_loss", lambda *a, **k: next(fake))
    cfg = TrainingConfig(max_epochs=8, record_interval=1, batch_size=12, early_stop_rule=None)
    _, trace = tr.train(arch, data, spec, cfg)
    # the second halving needs four fresh recordings after the first
    assert [e for e, _ in trace.lr_events] == [4, 8]


def test_early_stop_triggers(rng, monkeypatch):
    import qru.training as tr

    arch, data, spec = _toy(rng)
    fake = iter([1.0, 0.999, 0.998, 0.997, 0.5])
    monkeypatch.setattr(tr, "batch_loss", lambda *a, **k: next(fake))
    cfg = TrainingConfig(max_epochs=50, record_interval=2, batch_size=12)
    _, trace = tr.train(arch, data, spec, cfg)
    assert trace.stop_reason is StopReason.EARLY_STOP and trace.epochs_run == 8


def test_plateau_needs_validation(rng):
    arch, data, spec = _toy(rng)
    with pytest.raises(ConfigError):
        train(arch, data, spec, TrainingConfig(early_stop_rule=ValidationPlateau()))


def test_plateau_stops_on_flat_validation(rng, monkeypatch):
    import qru.training as tr

    arch, data, spec = _toy(rng)
    calls = {"n": 0}

    def fake(arch_, params, batch, spec_):
        calls["n"] += 1
        return 0.3 if batch is val else 1.0 / calls["n"]

    val = data.subset([0, 1])
    monkeypatch.setattr(tr, "batch_loss", fake)
    cfg = TrainingConfig(max_epochs=100, record_interval=1, batch_size=12, early_stop_rule=ValidationPlateau(10))
    _, trace = tr.train(arch, data, spec, cfg, validation=val)
    assert trace.stop_reason is StopReason.EARLY_STOP and trace.epochs_run == 10


def test_divergence_raises_with_trace(rng, monkeypatch):
    import qru.training as tr

    arch, data, spec = _toy(rng)
    monkeypatch.setattr(tr, "batch_loss", lambda *a, **k: math.nan)
    with pytest.raises(DivergenceError) as info:
        tr.train(arch, data, spec, TrainingConfig(max_epochs=3, record_interval=1, batch_size=12))
    assert info.value.trace.epochs_run == 1


def test_empty_dataset_rejected():
    with pytest.raises(InputError):
        Batch(np.zeros((0, 1, 1)), np.zeros(0))
