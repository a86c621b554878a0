"""Handover decision process driven by a recorded trace.

State is (stacked recent frames per camera, associated BS j, disruption
counter c). While c > 0 the link is down: the only legal action is the
current association and the reward is zero. Switching BS from a connected
state restarts the counter at floor(T_dis / tau), computed in integer
milliseconds so there is no float time arithmetic anywhere.

BS indices and actions are 1-based throughout the public API.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EndOfTraceError, InsufficientDataError, ProtocolViolationError


@dataclass(frozen=True)
class ProcessConfig:
    num_bs: int
    num_cameras: int
    stack_depth: int = 2
    epoch_interval_ms: int = 30
    disruption_time_ms: int = 0

    def __post_init__(self):
        for name in ("num_bs", "num_cameras", "stack_depth", "epoch_interval_ms"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.disruption_time_ms, int) or self.disruption_time_ms < 0:
            raise ValueError(f"disruption_time_ms must be a non-negative integer, got {self.disruption_time_ms!r}")

    @property
    def disruption_epochs(self) -> int:
        """Number of zero-reward epochs after a handover."""
        return self.disruption_time_ms // self.epoch_interval_ms


@dataclass(frozen=True, eq=False)
class DecisionState:
    """frames[i, k] is the camera-(i+1) frame k epochs back (newest first)."""

    frames: np.ndarray  # (num_cameras, stack_depth, H, W)
    assoc_bs: int       # 1-based
    counter: int
    epoch: int          # trace index of the newest frame


@dataclass(frozen=True, eq=False)
class StepOutcome:
    state: DecisionState
    reward_bps: float
    terminal: bool


def action_set(state: DecisionState, cfg: ProcessConfig) -> frozenset:
    """Legal actions: every BS when connected, else only the current one."""
    if state.counter == 0:
        return frozenset(range(1, cfg.num_bs + 1))
    return frozenset((state.assoc_bs,))


def action_mask(assoc_bs: int, counter: int, num_bs: int) -> np.ndarray:
    """Boolean mask over actions 1..J (index a-1) for the given (j, c)."""
    if counter == 0:
        return np.ones(num_bs, dtype=bool)
    mask = np.zeros(num_bs, dtype=bool)
    mask[assoc_bs - 1] = True
    return mask


def _check_action(action: int, cfg: ProcessConfig):
    if not isinstance(action, (int, np.integer)) or isinstance(action, bool):
        raise ValueError(f"action must be an integer, got {action!r}")
    if not 1 <= action <= cfg.num_bs:
        raise ProtocolViolationError(f"action {action} outside 1..{cfg.num_bs}")


def next_assoc(assoc_bs: int, action: int, cfg: ProcessConfig) -> int:
    _check_action(action, cfg)
    return int(action)


def next_counter(counter: int, assoc_bs: int, action: int, cfg: ProcessConfig) -> int:
    """Counter dynamics: decrement while disrupted, restart on a switch."""
    _check_action(action, cfg)
    if counter > 0:
        if action != assoc_bs:
            raise ProtocolViolationError(
                f"only action {assoc_bs} is legal while the counter is {counter}"
            )
        return counter - 1
    if action == assoc_bs:
        return 0
    return cfg.disruption_epochs


def reward_bps(capacity_next_bps: float, counter_next: int) -> float:
    """Reward at the next epoch: the new link's capacity, or 0 while disrupted."""
    if counter_next > 0:
        return 0.0
    if np.isnan(capacity_next_bps) or capacity_next_bps < 0:
        raise ValueError(f"capacity must be non-negative, got {capacity_next_bps}")
    return float(capacity_next_bps)


def _frame_stack(frames: np.ndarray, epoch: int, depth: int) -> np.ndarray:
    # Negative-stride view: stack[i, k] == frames[i, epoch - k], no copy.
    return frames[:, epoch - depth + 1 : epoch + 1][:, ::-1]


def initial_state(segment, cfg: ProcessConfig) -> DecisionState:
    """First decidable state: newest frame at index N-1, associated with BS 1."""
    n = cfg.stack_depth
    if segment.num_epochs < n:
        raise InsufficientDataError(
            f"segment has {segment.num_epochs} epochs, need at least {n}"
        )
    return DecisionState(
        frames=_frame_stack(segment.frames, n - 1, n),
        assoc_bs=1,
        counter=0,
        epoch=n - 1,
    )


def step(state: DecisionState, action: int, segment, cfg: ProcessConfig) -> StepOutcome:
    """Advance one epoch. Raises ProtocolViolationError on illegal actions."""
    t_next = state.epoch + 1
    if t_next >= segment.num_epochs:
        raise EndOfTraceError(f"no epoch {t_next} in a segment of {segment.num_epochs}")
    c_next = next_counter(state.counter, state.assoc_bs, action, cfg)
    j_next = next_assoc(state.assoc_bs, action, cfg)
    r = reward_bps(float(segment.capacity(j_next)[t_next]), c_next)
    nxt = DecisionState(
        frames=_frame_stack(segment.frames, t_next, cfg.stack_depth),
        assoc_bs=j_next,
        counter=c_next,
        epoch=t_next,
    )
    return StepOutcome(state=nxt, reward_bps=r, terminal=t_next == segment.num_epochs - 1)
