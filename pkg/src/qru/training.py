"""Adam training with learning-rate halving, best-state reversion and early stopping.

Every ``record_interval`` epochs the full training-set loss is recorded. If the
last three recordings all exceed the fourth-last one, the learning rate halves,
the live parameters revert to the best recorded state and the Adam moments are
reset. Early stopping then looks at the same recordings (or at validation
recordings for the plateau rule).

Both checks only see recordings made since the most recent halving, so the
window that triggered a halving cannot trigger a second one or an early stop
straight after reverting.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cell import ParameterLayout, ParameterSet, QRUArchitecture, init_params, _as_values
from .errors import ConfigError, DivergenceError, InputError
from .gradients import Batch, batch_loss, loss_and_gradient
from .losses import LossSpec


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelativeDecrease:
    """Stop once the relative drop between consecutive recordings stays below
    ``threshold`` for ``window`` consecutive recordings."""

    threshold: float = 0.01
    window: int = 3

    def __post_init__(self):
        if not self.threshold > 0:
            raise ConfigError("RelativeDecrease threshold must be positive")
        if self.window < 1:
            raise ConfigError("RelativeDecrease window must be >= 1")


@dataclass(frozen=True)
class ValidationPlateau:
    """Stop once none of the last ``window - 1`` validation recordings beats the
    one recorded ``window`` steps back."""

    window: int = 10

    def __post_init__(self):
        if self.window < 2:
            raise ConfigError("ValidationPlateau window must be >= 2")


StopRule = RelativeDecrease | ValidationPlateau | None


def stop_rule_from_dict(d) -> StopRule:
    if d is None:
        return None
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "relative_decrease":
        return RelativeDecrease(**d)
    if kind == "validation_plateau":
        return ValidationPlateau(**d)
    if kind in ("none", None):
        return None
    raise ConfigError(f"unknown early-stop rule {kind!r}")


def stop_rule_to_dict(rule: StopRule):
    if rule is None:
        return {"kind": "none"}
    kind = "relative_decrease" if isinstance(rule, RelativeDecrease) else "validation_plateau"
    return {"kind": kind, **asdict(rule)}


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.01
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    batch_size: int = 20
    record_interval: int = 10
    max_epochs: int = 1000
    early_stop_rule: StopRule = field(default_factory=RelativeDecrease)
    seed: int = 0
    init_spread: float = math.pi / 10

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if len(self.adam_betas) != 2 or not all(0.0 <= b < 1.0 for b in self.adam_betas):
            raise ConfigError("adam_betas must be two values in [0, 1)")
        if not self.adam_epsilon > 0:
            raise ConfigError("adam_epsilon must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.record_interval < 1:
            raise ConfigError("record_interval must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if not self.init_spread > 0:
            raise ConfigError("init_spread must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        d["early_stop_rule"] = stop_rule_to_dict(self.early_stop_rule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training fields: {sorted(unknown)}")
        if "early_stop_rule" in d:
            d["early_stop_rule"] = stop_rule_from_dict(d["early_stop_rule"])
        return cls(**d)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grad, moments: AdamState, config: TrainingConfig, lr: float | None = None):
    """One bias-corrected Adam update. Returns ``(params', moments')``; inputs are not mutated."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or moments.m.shape != params.shape:
        raise InputError(f"shape mismatch: params {params.shape}, grad {grad.shape}, moments {moments.m.shape}")
    lr = config.learning_rate if lr is None else lr
    b1, b2 = config.adam_betas
    t = moments.t + 1
    m = b1 * moments.m + (1 - b1) * grad
    v = b2 * moments.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + config.adam_epsilon), AdamState(m, v, t)


# ---------------------------------------------------------------------------
# Schedule and stopping rules (pure functions of recorded losses)
# ---------------------------------------------------------------------------

class ScheduleDecision(enum.Enum):
    CONTINUE = "continue"
    HALVE_AND_REVERT = "halve_and_revert"


def _losses(recordings) -> list[float]:
    # accept bare losses or (epoch, loss) pairs
    return [r[1] if isinstance(r, (tuple, list)) else r for r in recordings]


def lr_schedule_check(recordings) -> ScheduleDecision:
    r = _losses(recordings)
    if len(r) < 4:
        return ScheduleDecision.CONTINUE
    ref = r[-4]
    if all(x > ref for x in r[-3:]):
        return ScheduleDecision.HALVE_AND_REVERT
    return ScheduleDecision.CONTINUE


def early_stop_check(recordings, rule: StopRule) -> bool:
    r = _losses(recordings)
    if rule is None:
        return False
    if isinstance(rule, RelativeDecrease):
        if len(r) < rule.window + 1:
            return False
        recent = range(len(r) - rule.window, len(r))
        return all((r[k - 1] - r[k]) / r[k - 1] < rule.threshold for k in recent)
    if isinstance(rule, ValidationPlateau):
        if len(r) < rule.window:
            return False
        ref = r[-rule.window]
        return not any(x < ref for x in r[-(rule.window - 1):])
    raise ConfigError(f"unsupported stop rule {rule!r}")


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

class StopReason(str, enum.Enum):
    MAX_EPOCHS = "max_epochs"
    EARLY_STOP = "early_stop"
    NOT_STARTED = "not_started"


@dataclass
class TrainingTrace:
    recorded_losses: list = field(default_factory=list)  # (epoch, training loss)
    validation_losses: list = field(default_factory=list)  # (epoch, validation loss)
    lr_events: list = field(default_factory=list)  # (epoch, new lr)
    reversion_events: list = field(default_factory=list)  # epochs
    best_params: np.ndarray | None = None
    best_loss: float | None = None
    best_epoch: int | None = None
    epochs_run: int = 0
    stop_reason: StopReason = StopReason.NOT_STARTED

    def to_dict(self) -> dict:
        return {
            "recorded_losses": [[e, l] for e, l in self.recorded_losses],
            "validation_losses": [[e, l] for e, l in self.validation_losses],
            "lr_events": [[e, lr] for e, lr in self.lr_events],
            "reversion_events": list(self.reversion_events),
            "best_params": None if self.best_params is None else self.best_params.tolist(),
            "best_loss": self.best_loss,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "stop_reason": self.stop_reason.value,
        }


def _finite_or_raise(value: float, what: str, epoch: int, trace: TrainingTrace):
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became {value} at epoch {epoch}", trace=trace)


def train(
    arch: QRUArchitecture,
    dataset: Batch,
    loss_spec: LossSpec,
    config: TrainingConfig,
    validation: Batch | None = None,
    initial_params=None,
):
    """Train from a seeded initialisation; returns ``(ParameterSet, trace)``.

    The returned parameters are the snapshot with the lowest recorded training
    loss. With no recordings (too few epochs) the live parameters come back.
    """
    if len(dataset) == 0:
        raise InputError("training set is empty")
    if isinstance(config.early_stop_rule, ValidationPlateau) and validation is None:
        raise ConfigError("the validation-plateau rule needs a validation set")
    rng = np.random.default_rng(config.seed)
    if initial_params is None:
        params = init_params(arch, rng, spread=config.init_spread)
    else:
        params = np.array(_as_values(arch, initial_params), dtype=float)
    moments = AdamState.zeros(params.size)
    lr = config.learning_rate
    trace = TrainingTrace()
    best = params.copy()
    best_loss = math.inf
    segment = 0  # first recording index since the last halving

    n = len(dataset)
    trace.stop_reason = StopReason.MAX_EPOCHS
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = dataset.subset(order[start:start + config.batch_size])
            loss, grad = loss_and_gradient(arch, params, batch, loss_spec)
            _finite_or_raise(loss, "mini-batch loss", epoch, trace)
            params, moments = adam_step(params, grad, moments, config, lr)
        trace.epochs_run = epoch

        if epoch % config.record_interval:
            continue
        loss = batch_loss(arch, params, dataset, loss_spec)
        _finite_or_raise(loss, "training loss", epoch, trace)
        trace.recorded_losses.append((epoch, loss))
        if validation is not None:
            vloss = batch_loss(arch, params, validation, loss_spec)
            _finite_or_raise(vloss, "validation loss", epoch, trace)
            trace.validation_losses.append((epoch, vloss))
        if loss < best_loss:
            best, best_loss = params.copy(), loss
            trace.best_epoch = epoch

        if lr_schedule_check(trace.recorded_losses[segment:]) is ScheduleDecision.HALVE_AND_REVERT:
            lr /= 2
            params = best.copy()
            moments = AdamState.zeros(params.size)
            trace.lr_events.append((epoch, lr))
            trace.reversion_events.append(epoch)
            segment = len(trace.recorded_losses)
            continue

        watched = trace.validation_losses if isinstance(config.early_stop_rule, ValidationPlateau) else trace.recorded_losses
        if early_stop_check(watched[segment:], config.early_stop_rule):
            trace.stop_reason = StopReason.EARLY_STOP
            break

    if config.max_epochs == 0:
        trace.stop_reason = StopReason.NOT_STARTED
    layout = ParameterLayout.from_arch(arch)
    if trace.recorded_losses:
        trace.best_params = best
        trace.best_loss = best_loss
        return ParameterSet(layout, best.copy()), trace
    trace.best_params = params.copy()
    return ParameterSet(layout, params), trace
