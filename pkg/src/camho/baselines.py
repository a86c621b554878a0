"""Reference policies: static association, reactive power-based handover,
and an exact finite-horizon dynamic-programming oracle.

All of them consume the same capacity series the learned agent is scored
on and share one rollout loop, so averages are directly comparable (same
decision epochs, same disruption bookkeeping, same mean).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .agent import EvalResult, LogStep
from .errors import InsufficientDataError
from .process import ProcessConfig, next_counter, reward_bps


def run_policy(choose_action, capacities, cfg: ProcessConfig) -> EvalResult:
    """Roll a policy over a capacity series.

    choose_action(t, assoc, counter) is consulted only when a decision is
    free (counter == 0); disruption epochs repeat the pending association.
    """
    capacities = np.asarray(capacities, dtype=np.float64)
    n = cfg.stack_depth
    length = capacities.shape[1]
    if length <= n:
        raise InsufficientDataError(
            f"need more than {n} epochs to take a decision, got {length}"
        )
    t, j, c = n - 1, 1, 0
    steps = []
    rewards = np.empty(length - n)
    while t < length - 1:
        a = j if c > 0 else int(choose_action(t, j, c))
        c2 = next_counter(c, j, a, cfg)
        r = reward_bps(float(capacities[a - 1, t + 1]), c2)
        steps.append(LogStep(t, j, c, a, r))
        rewards[t - (n - 1)] = r
        t, j, c = t + 1, a, c2
    return EvalResult(average_bps=float(np.mean(rewards)), steps=steps)


def static_policy(capacities, cfg: ProcessConfig, bs: int) -> EvalResult:
    """Stay on one base station for the whole segment."""
    if not 1 <= bs <= capacities.shape[0]:
        raise ValueError(f"base station {bs} out of range")

    def choose(t, j, c):
        return bs

    return run_policy(choose, capacities, cfg)


def reactive_policy(powers, capacities, cfg: ProcessConfig,
                    hysteresis_db: float = 0.0) -> EvalResult:
    """Switch whenever another station's current received power clears the
    serving one by the hysteresis margin. Ties go to the lowest id."""
    powers = np.asarray(powers, dtype=np.float64)
    if powers.shape != np.asarray(capacities).shape:
        raise ValueError("powers and capacities must have matching shapes")

    def choose(t, j, c):
        col = powers[:, t]
        best = int(np.argmax(col)) + 1
        if col[best - 1] > col[j - 1] + hysteresis_db:
            return best
        return j

    return run_policy(choose, capacities, cfg)


# -- exact oracle -------------------------------------------------------------


@dataclass
class DpResult:
    values: np.ndarray  # (decisions+1, num_bs, disruption_epochs+1)
    policy: np.ndarray  # same shape, int; -1 where no decision exists
    rollout: EvalResult
    handover_count: int

    @property
    def average_bps(self) -> float:
        return self.rollout.average_bps


def dp_oracle(capacities, cfg: ProcessConfig,
              horizon: Optional[int] = None) -> DpResult:
    """Undiscounted backward induction over (epoch, association, counter).

    Maximizes the summed reward from the first decision epoch to the end
    of the series, which also maximizes the average. Ties prefer staying,
    then the lowest station id, so the oracle never makes a handover that
    does not strictly pay.
    """
    try:
        capacities = np.asarray(capacities, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("per-station capacity series must share one length") from exc
    if capacities.ndim != 2:
        raise ValueError("capacities must be a (num_bs, epochs) array")
    if horizon is not None:
        capacities = capacities[:, :horizon]
    n = cfg.stack_depth
    num_bs, length = capacities.shape
    if num_bs != cfg.num_bs:
        raise ValueError(
            f"capacity series covers {num_bs} stations, config says {cfg.num_bs}"
        )
    if length <= n:
        raise InsufficientDataError(
            f"need more than {n} epochs to take a decision, got {length}"
        )
    cmax = cfg.disruption_epochs
    rows = length - n + 1  # decision epochs plus the terminal row
    values = np.zeros((rows, num_bs, cmax + 1))
    policy = np.full((rows, num_bs, cmax + 1), -1, dtype=np.int64)

    for s in range(rows - 2, -1, -1):
        t = s + n - 1
        for j in range(1, num_bs + 1):
            for c in range(cmax + 1):
                if c > 0:
                    candidates = (j,)
                else:
                    candidates = (j, *(a for a in range(1, num_bs + 1) if a != j))
                best_v = -np.inf
                best_a = -1
                for a in candidates:
                    c2 = c - 1 if c > 0 else (0 if a == j else cmax)
                    r = capacities[a - 1, t + 1] if c2 == 0 else 0.0
                    v = r + values[s + 1, a - 1, c2]
                    if v > best_v:
                        best_v = v
                        best_a = a
                values[s, j - 1, c] = best_v
                policy[s, j - 1, c] = best_a

    def choose(t, j, c):
        return int(policy[t - (n - 1), j - 1, c])

    rollout = run_policy(choose, capacities, cfg)
    handovers = sum(1 for step in rollout.steps if step.action != step.assoc_bs)
    return DpResult(values=values, policy=policy, rollout=rollout,
                    handover_count=handovers)
