"""Performance contract monitoring with violation-excluded running average.

At the end of each time quantum the iteration rate is compared against the
average over all previous non-violating quanta.  A quantum whose degradation
exceeds the threshold is a violation and is excluded from the average; a
streak of the configured length triggers remediation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Tuple


@dataclass(frozen=True)
class ContractParams:
    quantum_seconds: float
    degradation_threshold: float
    consecutive_required: int

    def __post_init__(self):
        if self.quantum_seconds <= 0:
            raise ValueError("quantum_seconds must be > 0")
        if not 0 < self.degradation_threshold < 1:
            raise ValueError("degradation_threshold must be in (0, 1)")
        if self.consecutive_required < 1:
            raise ValueError("consecutive_required must be >= 1")


@dataclass(frozen=True)
class QuantumVerdict:
    index: int
    rate: float
    average: float
    degradation: float
    violation: bool
    trigger: bool


@dataclass(frozen=True)
class ContractState:
    params: ContractParams
    non_violating_rate_sum: float
    non_violating_count: int
    consecutive_violations: int
    quantum_index: int
    history: Tuple[QuantumVerdict, ...]
    # a streak fires remediation at most once, even if it keeps growing
    streak_triggered: bool = False

    @property
    def average(self) -> float:
        return self.non_violating_rate_sum / self.non_violating_count


def init(first_quantum_rate: float, params: ContractParams) -> ContractState:
    """Record the first quantum; the baseline is the rate it achieved."""
    if first_quantum_rate <= 0:
        raise ValueError("first_quantum_rate must be > 0")
    verdict = QuantumVerdict(
        index=1,
        rate=first_quantum_rate,
        average=first_quantum_rate,
        degradation=0.0,
        violation=False,
        trigger=False,
    )
    return ContractState(
        params=params,
        non_violating_rate_sum=first_quantum_rate,
        non_violating_count=1,
        consecutive_violations=0,
        quantum_index=1,
        history=(verdict,),
    )


def observe(
    state: ContractState, iterations_completed: float, elapsed: float
) -> Tuple[ContractState, QuantumVerdict]:
    """Close out a quantum: classify it and update the running average.

    Violating quanta are excluded from the average and advance the streak
    counter; non-violating quanta reset it.  The trigger fires once per
    streak, as soon as the streak length reaches the configured count.
    """
    if elapsed <= 0:
        raise ValueError("elapsed must be > 0")
    rate = iterations_completed / elapsed
    average = state.average
    degradation = max(0.0, (average - rate) / average) if average > 0 else 0.0
    violation = degradation > state.params.degradation_threshold
    index = state.quantum_index + 1

    if violation:
        consecutive = state.consecutive_violations + 1
        rate_sum = state.non_violating_rate_sum
        count = state.non_violating_count
        trigger = (
            consecutive >= state.params.consecutive_required
            and not state.streak_triggered
        )
        streak_triggered = state.streak_triggered or trigger
    else:
        consecutive = 0
        rate_sum = state.non_violating_rate_sum + rate
        count = state.non_violating_count + 1
        trigger = False
        streak_triggered = False

    verdict = QuantumVerdict(index, rate, average, degradation, violation, trigger)
    new_state = ContractState(
        params=state.params,
        non_violating_rate_sum=rate_sum,
        non_violating_count=count,
        consecutive_violations=consecutive,
        quantum_index=index,
        history=state.history + (verdict,),
        streak_triggered=streak_triggered,
    )
    return new_state, verdict


def set_params(state: ContractState, new_params: ContractParams) -> ContractState:
    """Swap parameters at a quantum boundary; counters are preserved."""
    if not isinstance(new_params, ContractParams):
        raise TypeError("new_params must be a ContractParams")
    return dataclasses.replace(state, params=new_params)
