"""When to rebalance: every k steps, or adaptively from observed step times."""
from __future__ import annotations

import math
import statistics
from collections import deque
from dataclasses import dataclass, field


def fixed_trigger(step: int, k: int) -> bool:
    if k < 1:
        raise ValueError("k must be >= 1")
    return step > 0 and step % k == 0


def compulsory_initial_balance() -> bool:
    """The balance performed after particle placement, before step 1."""
    return True


@dataclass
class AdaptiveState:
    """Controller state for adaptive triggering.

    An evaluation phase covers the ``eval_interval`` steps following each
    rebalance (the compulsory one at step 0 included). During a phase the
    baseline ``t1`` (mean step time) and ``c1`` (middle step) are measured and
    nothing fires.
    """

    threshold: float = 0.05
    eval_interval: int = 100
    t1: float = math.nan
    c1: int = 0
    t2: float = math.nan
    lb_time: float = 0.0
    r_step: int = 0
    reinit_itv: int = 0
    rebal: float = math.inf
    degradation: float = 0.0
    lb_once: bool = False
    cts: int = 0
    _window: deque = field(default_factory=lambda: deque(maxlen=3), repr=False)
    _phase_sum: float = field(default=0.0, repr=False)
    _phase_count: int = field(default=0, repr=False)

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.eval_interval < 3:
            raise ValueError("eval_interval must be >= 3")

    def in_phase(self, step: int) -> bool:
        return self.r_step < step <= self.r_step + self.eval_interval


def rebalance_interval(reinit_itv: float, lb_time: float, excess: float) -> float:
    """Predicted steps until the next rebalance, ``sqrt(2 * reinit_itv * lb_time / excess)``.

    ``excess`` is the growth of step time over ``reinit_itv`` steps. When it
    is not positive performance has not degraded and the interval is infinite.
    """
    if excess <= 0:
        return math.inf
    return math.sqrt(2.0 * reinit_itv * lb_time / excess)


def _fire(state: AdaptiveState, reinit_itv: int) -> None:
    state.reinit_itv = reinit_itv
    state.r_step = state.cts
    state.degradation = 0.0


def adaptive_observe(state: AdaptiveState, step: int, step_time: float) -> tuple[AdaptiveState, bool]:
    """Feed one completed step's time; returns ``(state, rebalance_now)``.

    After a ``True`` decision the caller performs the rebalance and reports
    its cost with :func:`record_lb_time`.
    """
    if not state._window:
        state._window.extend([step_time] * 2)
    state._window.append(step_time)
    state.cts = step
    state.t2 = statistics.median(state._window)

    if state.in_phase(step):
        if step == state.r_step + 1:
            if state.lb_once:
                # the previous phase's baseline is still in t1 here
                state.rebal = rebalance_interval(state.reinit_itv, state.lb_time, state.t2 - state.t1)
            state._phase_sum = 0.0
            state._phase_count = 0
        state._phase_sum += step_time
        state._phase_count += 1
        state.t1 = state._phase_sum / state._phase_count
        state.c1 = state.r_step + state.eval_interval // 2
        return state, False

    if not state.lb_once:
        if state.t1 > 0 and (state.t2 - state.t1) / state.t1 > state.threshold:
            _fire(state, step - state.c1)
            state.lb_once = True
            return state, True
        return state, False

    state.degradation += state.t2 - state.t1
    if step - state.r_step >= state.rebal or state.degradation > state.lb_time:
        _fire(state, step - state.r_step)
        return state, True
    return state, False


def record_lb_time(state: AdaptiveState, lb_time: float) -> None:
    state.lb_time = float(lb_time)


class Trigger:
    """Trigger policy parsed from ``fixed:<k>``, ``adaptive`` or ``never``."""

    def __init__(self, policy: str, threshold: float = 0.05, eval_interval: int = 100):
        policy = policy.strip()
        self.policy = policy
        self.k = None
        self.adaptive = None
        if policy == "never":
            self.kind = "never"
        elif policy == "adaptive":
            self.kind = "adaptive"
            self.adaptive = AdaptiveState(threshold=threshold, eval_interval=eval_interval)
        elif policy.startswith("fixed:"):
            self.kind = "fixed"
            self.k = int(policy.split(":", 1)[1])
            if self.k < 1:
                raise ValueError("fixed trigger interval must be >= 1")
        else:
            raise ValueError(f"unknown trigger {policy!r}; expected fixed:<k>, adaptive or never")

    @property
    def initial_balance(self) -> bool:
        return self.kind != "never" and compulsory_initial_balance()

    def decide(self, step: int, step_time: float) -> bool:
        if self.kind == "fixed":
            return fixed_trigger(step, self.k)
        if self.kind == "adaptive":
            _, fire = adaptive_observe(self.adaptive, step, step_time)
            return fire
        return False

    def record(self, lb_time: float) -> None:
        if self.adaptive is not None:
            record_lb_time(self.adaptive, lb_time)
