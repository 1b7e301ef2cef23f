"""Closed-loop tuning of alpha_prime toward a target average wait.

alpha_prime is modelled as a locally linear function of the measured wait,
fitted by least squares over the last ten observations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

HISTORY_SIZE = 10


@dataclass(frozen=True)
class TunerState:
    target_wait: float
    current_alpha: float = 0.5
    damping: float = 0.5
    history: tuple[tuple[float, float], ...] = field(default_factory=tuple)  # (alpha, wait seconds)

    def __post_init__(self):
        if self.target_wait < 0:
            raise ValueError("target_wait must be >= 0")
        if not 0.0 <= self.current_alpha <= 1.0:
            raise ValueError("current_alpha must lie in [0, 1]")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if len(self.history) > HISTORY_SIZE:
            object.__setattr__(self, "history", tuple(self.history[-HISTORY_SIZE:]))

    def to_json(self) -> dict:
        return {
            "target_wait": self.target_wait,
            "current_alpha": self.current_alpha,
            "damping": self.damping,
            "history": [list(p) for p in self.history],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TunerState":
        return cls(
            float(doc["target_wait"]),
            float(doc["current_alpha"]),
            float(doc["damping"]),
            tuple((float(a), float(w)) for a, w in doc["history"]),
        )


def observe(state: TunerState, alpha_used: float, measured_wait: float) -> TunerState:
    if not 0.0 <= alpha_used <= 1.0:
        raise ValueError("alpha_used must lie in [0, 1]")
    hist = (state.history + ((float(alpha_used), float(measured_wait)),))[-HISTORY_SIZE:]
    return replace(state, history=hist)


def next_alpha(state: TunerState) -> float:
    """Least-squares line alpha = a + b*wait, evaluated at the target and damped."""
    if len(state.history) < 2:
        return state.current_alpha
    a, w = np.array(state.history, dtype=float).T
    # waits are seconds: spreads below a nanosecond (relative) carry no slope information
    if np.ptp(w) <= 1e-9 * max(1.0, float(np.max(np.abs(w)))):
        return state.current_alpha
    wc = w - w.mean()
    slope = float(wc @ (a - a.mean()) / (wc @ wc))
    proposal = a.mean() + slope * (state.target_wait - w.mean())
    new = state.current_alpha + state.damping * (proposal - state.current_alpha)
    if not np.isfinite(new):
        return state.current_alpha
    return float(np.clip(new, 0.0, 1.0))


def tune_step(state: TunerState, alpha_used: float, measured_wait: float, probe_step: float = 0.2) -> TunerState:
    """Observe one measurement and move ``current_alpha``.

    Wait is non-decreasing in alpha_prime, so a wait above target must not
    raise alpha and a wait below target must not lower it. When the fitted
    line points the other way (noise on few points) or gives no move at all,
    probe by ``probe_step`` in the wait-correcting direction instead.
    """
    state = observe(state, alpha_used, measured_wait)
    new = next_alpha(state)
    if measured_wait != state.target_wait:
        direction = -1.0 if measured_wait > state.target_wait else 1.0
        if (new - alpha_used) * direction <= 0.0:
            new = float(np.clip(alpha_used + direction * probe_step, 0.0, 1.0))
    return replace(state, current_alpha=new)


def save_state(state: TunerState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(state.to_json()))


def load_state(path: str | Path) -> TunerState:
    return TunerState.from_json(json.loads(Path(path).read_text()))
