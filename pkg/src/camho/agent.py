"""DQN training loop over recorded traces.

One learning iteration is a full pass over the training segment with
epsilon-greedy exploration, experience replay (ring buffer, uniform
sampling) and a periodically synced target network. Evaluation is a
greedy rollout over the held-out segment; the best checkpoint is the one
with the highest evaluation average, earliest iteration on ties.

Implementation notes, all behavior-preserving:
  - states are referenced by (epoch, association, counter); pixel stacks
    materialize from a per-segment pool that matches encode_state exactly
    (a replay of 100k dense float64 stacks would not fit in memory);
  - the target network's conv trunk is recomputed over the whole segment
    only at sync time, since its parameters are frozen in between;
  - greedy evaluation precomputes Q for every (epoch, j, c) combination
    under the fixed parameters, then walks the trajectory.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import net as qnet
from .errors import CompatibilityError, InsufficientDataError, ProtocolViolationError
from .process import ProcessConfig, action_mask, next_counter, reward_bps


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_decrement: float = 0.01
    epsilon_floor: float = 0.01
    minibatch_size: int = 32
    replay_capacity: int = 100_000
    target_sync_period: int = 10_000
    learning_rate: float = 2.5e-4
    rms_rho: float = 0.95
    rms_eps: float = 1e-6
    reward_scale: float = 1e9
    stack_depth: int = 2
    disruption_time_ms: int = 0
    cameras: Optional[tuple] = None  # 1-based subset; None = all cameras
    update_period: int = 1
    reset_replay_each_iteration: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.epsilon_floor <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_floor <= epsilon_start <= 1")
        if self.epsilon_decrement <= 0:
            raise ValueError("epsilon_decrement must be positive")
        if self.minibatch_size < 1 or self.replay_capacity < self.minibatch_size:
            raise ValueError("replay capacity must hold at least one minibatch")
        if self.target_sync_period < 1 or self.update_period < 1:
            raise ValueError("periods must be >= 1")
        if self.learning_rate <= 0 or self.reward_scale <= 0:
            raise ValueError("learning rate and reward scale must be positive")
        if self.stack_depth < 1:
            raise ValueError("stack_depth must be >= 1")
        if not isinstance(self.disruption_time_ms, int) or self.disruption_time_ms < 0:
            raise ValueError("disruption_time_ms must be a non-negative integer")
        if self.cameras is not None:
            cams = tuple(sorted(set(self.cameras)))
            if len(cams) < 1 or not all(isinstance(i, int) and i >= 1 for i in cams):
                raise ValueError("cameras must be positive integer ids")
            object.__setattr__(self, "cameras", cams)

    def process_config(self, trace) -> ProcessConfig:
        return ProcessConfig(
            num_bs=trace.num_bs,
            num_cameras=trace.num_cameras,
            stack_depth=self.stack_depth,
            epoch_interval_ms=trace.epoch_interval_ms,
            disruption_time_ms=self.disruption_time_ms,
        )


def epsilon_at(cfg: TrainConfig, iteration: int) -> float:
    """Exploration rate for a 0-based iteration index.

    The floor is returned exactly once the linear schedule meets it; the
    small guard keeps float rounding in k*decrement from overshooting the
    crossover iteration.
    """
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    span = cfg.epsilon_start - cfg.epsilon_floor
    steps_to_floor = math.ceil(span / cfg.epsilon_decrement - 1e-9)
    if iteration >= steps_to_floor:
        return cfg.epsilon_floor
    return cfg.epsilon_start - iteration * cfg.epsilon_decrement


def select_action(q_values, allowed, epsilon: float, rng) -> int:
    """Epsilon-greedy over the allowed subset; greedy ties go to the lowest id."""
    allowed = sorted(allowed)
    if not allowed:
        raise ProtocolViolationError("allowed action set is empty")
    if len(allowed) == 1:
        return allowed[0]
    if rng.random() < epsilon:
        return allowed[int(rng.integers(len(allowed)))]
    q = np.asarray(q_values)
    picks = q[np.asarray(allowed) - 1]
    return allowed[int(np.argmax(picks))]


def td_targets(rewards, next_q, next_mask, terminal, gamma: float) -> np.ndarray:
    """r + gamma * max over allowed next actions, no bootstrap on terminals."""
    masked = np.where(next_mask, next_q, -np.inf)
    best = masked.max(axis=1)
    bootstrap = np.where(terminal, 0.0, gamma * best)
    return np.asarray(rewards, dtype=np.float64) + bootstrap


class ReplayBatch(NamedTuple):
    epoch: np.ndarray
    assoc: np.ndarray
    counter: np.ndarray
    action: np.ndarray
    reward_scaled: np.ndarray
    next_epoch: np.ndarray
    next_assoc: np.ndarray
    next_counter: np.ndarray
    next_mask: np.ndarray
    terminal: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer; sample() is uniform over current contents."""

    def __init__(self, capacity: int, num_bs: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._epoch = np.zeros(capacity, dtype=np.int64)
        self._assoc = np.zeros(capacity, dtype=np.int64)
        self._counter = np.zeros(capacity, dtype=np.int64)
        self._action = np.zeros(capacity, dtype=np.int64)
        self._reward = np.zeros(capacity, dtype=np.float64)
        self._next_epoch = np.zeros(capacity, dtype=np.int64)
        self._next_assoc = np.zeros(capacity, dtype=np.int64)
        self._next_counter = np.zeros(capacity, dtype=np.int64)
        self._next_mask = np.zeros((capacity, num_bs), dtype=bool)
        self._terminal = np.zeros(capacity, dtype=bool)
        self._count = 0

    @property
    def size(self) -> int:
        return min(self._count, self.capacity)

    def clear(self):
        self._count = 0

    def append(self, epoch, assoc, counter, action, reward_scaled,
               next_epoch, next_assoc, next_counter, next_mask, terminal):
        i = self._count % self.capacity
        self._epoch[i] = epoch
        self._assoc[i] = assoc
        self._counter[i] = counter
        self._action[i] = action
        self._reward[i] = reward_scaled
        self._next_epoch[i] = next_epoch
        self._next_assoc[i] = next_assoc
        self._next_counter[i] = next_counter
        self._next_mask[i] = next_mask
        self._terminal[i] = terminal
        self._count += 1

    def gather(self, idx) -> ReplayBatch:
        return ReplayBatch(
            epoch=self._epoch[idx],
            assoc=self._assoc[idx],
            counter=self._counter[idx],
            action=self._action[idx],
            reward_scaled=self._reward[idx],
            next_epoch=self._next_epoch[idx],
            next_assoc=self._next_assoc[idx],
            next_counter=self._next_counter[idx],
            next_mask=self._next_mask[idx],
            terminal=self._terminal[idx],
        )

    def sample(self, rng, batch_size: int) -> ReplayBatch:
        if self.size < 1:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.gather(idx)


# -- encoding pools -----------------------------------------------------------


def _side_features(assoc, counter, num_bs: int, disruption_epochs: int) -> np.ndarray:
    assoc = np.asarray(assoc)
    b = assoc.shape[0]
    side = np.zeros((b, num_bs + 1))
    side[np.arange(b), assoc - 1] = 1.0
    side[:, num_bs] = np.asarray(counter) / max(1, disruption_epochs)
    return side


class _SegmentCols:
    """Precomputed first-conv im2col rows per epoch for one segment.

    cols[t] holds the window rows of the stacked image a state at epoch t
    would encode to (camera-major, newest frame first); epochs below
    stack_depth-1 are left zero and never referenced. Rows are stored as
    float32, which is lossless here because source frames are float32;
    they are cast back to float64 at the matmul. Precomputing this once
    is what makes per-step forwards and replay minibatches cheap.
    """

    def __init__(self, segment, stack_depth: int, cameras, net_cfg, chunk: int = 256):
        n = stack_depth
        length = segment.num_epochs
        h, w = segment.frame_shape
        oh1, ow1 = net_cfg.conv1_out_hw
        self.n_win = oh1 * ow1
        self.fan1 = net_cfg.in_channels * net_cfg.conv1_kernel ** 2
        cols = np.zeros((length, self.n_win, self.fan1), dtype=np.float32)
        for lo in range(n - 1, length, chunk):
            hi = min(lo + chunk, length)
            img = np.zeros((hi - lo, len(cameras) * n, h, w))
            for ci, cam in enumerate(cameras):
                src = segment.frames[cam - 1]
                for k in range(n):
                    img[:, ci * n + k] = src[lo - k : hi - k]
            rows, _, _ = qnet._im2col(img, net_cfg.conv1_kernel, net_cfg.conv1_stride)
            cols[lo:hi] = rows.reshape(hi - lo, self.n_win, self.fan1)
        cols.flags.writeable = False
        self.cols = cols

    def gather64(self, idx) -> np.ndarray:
        """Rows for a batch of epochs, as (B * n_win, fan1) float64."""
        sel = self.cols[idx]
        return sel.reshape(-1, self.fan1).astype(np.float64)


def _conv_features_chunked(params, net_cfg, pool: _SegmentCols,
                           chunk: int = 256) -> np.ndarray:
    count = pool.cols.shape[0]
    out = np.empty((count, net_cfg.conv_feature_count))
    for lo in range(0, count, chunk):
        hi = min(lo + chunk, count)
        rows = pool.cols[lo:hi].reshape(-1, pool.fan1).astype(np.float64)
        out[lo:hi] = qnet.conv_features_from_cols(params, net_cfg, hi - lo, rows)
    return out


# -- evaluation ---------------------------------------------------------------


class LogStep(NamedTuple):
    epoch: int
    assoc_bs: int
    counter: int
    action: int
    reward_bps: float


@dataclass
class EvalResult:
    average_bps: float
    steps: list


def _greedy_rollout(q_table, capacities, process_cfg) -> EvalResult:
    """Walk the greedy trajectory given Q[t, j-1, c] tables."""
    n = process_cfg.stack_depth
    length = capacities.shape[1]
    t, j, c = n - 1, 1, 0
    steps = []
    rewards = np.empty(length - n)
    while t < length - 1:
        if c > 0:
            a = j
        else:
            a = int(np.argmax(q_table[t, j - 1, c])) + 1
        c2 = next_counter(c, j, a, process_cfg)
        r = reward_bps(float(capacities[a - 1, t + 1]), c2)
        steps.append(LogStep(t, j, c, a, r))
        rewards[t - (n - 1)] = r
        t, j, c = t + 1, a, c2
    return EvalResult(average_bps=float(np.mean(rewards)), steps=steps)


def evaluate_policy(params, net_cfg, segment, process_cfg: ProcessConfig,
                    cameras=None, pool: Optional[_SegmentCols] = None) -> EvalResult:
    """Greedy (epsilon = 0) rollout over a segment.

    Returns the mean of unscaled rewards over all decision epochs plus the
    per-step log. Disruption epochs contribute zeros to the mean.
    """
    if cameras is None:
        cameras = tuple(range(1, process_cfg.num_cameras + 1))
    n = process_cfg.stack_depth
    if segment.num_epochs <= n:
        raise InsufficientDataError(
            f"segment of {segment.num_epochs} epochs leaves no decision to evaluate"
        )
    if pool is None:
        pool = _SegmentCols(segment, n, cameras, net_cfg)
    feats = _conv_features_chunked(params, net_cfg, pool)
    length = segment.num_epochs
    cmax = process_cfg.disruption_epochs
    j_count = process_cfg.num_bs
    q_table = np.empty((length, j_count, cmax + 1, j_count))
    for j in range(1, j_count + 1):
        for c in range(cmax + 1):
            side = np.broadcast_to(
                _side_features(np.array([j]), np.array([c]), j_count, cmax)[0],
                (length, j_count + 1),
            )
            q_table[:, j - 1, c] = qnet.head_q(params, net_cfg, feats, side)
    return _greedy_rollout(q_table, segment.capacity_matrix(), process_cfg)


# -- trainer ------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    epsilon: float
    eval_average_bps: float


@dataclass
class TrainResult:
    best_params: dict
    best_iteration: int
    best_average_bps: float
    history: list = field(default_factory=list)
    net_config: Optional[qnet.NetConfig] = None
    cameras: Optional[tuple] = None
    checkpoint_meta: dict = field(default_factory=dict)


class DqnTrainer:
    def __init__(self, train_segment, eval_segment, cfg: TrainConfig):
        for attr in ("num_cameras", "num_bs", "frame_shape", "epoch_interval_ms",
                     "budgets"):
            if getattr(train_segment, attr) != getattr(eval_segment, attr):
                raise CompatibilityError(
                    f"training and evaluation segments disagree on {attr}"
                )
        self.cfg = cfg
        self.process_cfg = cfg.process_config(train_segment)
        n = cfg.stack_depth
        if train_segment.num_epochs <= n or eval_segment.num_epochs <= n:
            raise InsufficientDataError(
                f"segments must be longer than the {n}-frame stack"
            )
        self.cameras = cfg.cameras or tuple(range(1, train_segment.num_cameras + 1))
        for i in self.cameras:
            if not 1 <= i <= train_segment.num_cameras:
                raise CompatibilityError(
                    f"configured camera {i} but the trace has {train_segment.num_cameras}"
                )
        self.train_segment = train_segment
        self.eval_segment = eval_segment
        self.net_cfg = qnet.NetConfig.for_problem(
            self.process_cfg, train_segment.frame_shape, cameras=self.cameras
        )
        self.rng = np.random.default_rng(cfg.seed)
        self.params = qnet.init_params(self.net_cfg, seed=cfg.seed)
        self.optimizer = qnet.RmsProp(cfg.learning_rate, rho=cfg.rms_rho, eps=cfg.rms_eps)
        self.buffer = ReplayBuffer(cfg.replay_capacity, train_segment.num_bs)
        self.pool_train = _SegmentCols(train_segment, n, self.cameras, self.net_cfg)
        self.pool_eval = _SegmentCols(eval_segment, n, self.cameras, self.net_cfg)
        self.cap_train = train_segment.capacity_matrix()
        self.step_count = 0
        self._sync_target()

    # target network ------------------------------------------------------

    def _sync_target(self):
        self.target_params = {k: v.copy() for k, v in self.params.items()}
        self._target_feats = _conv_features_chunked(
            self.target_params, self.net_cfg, self.pool_train
        )

    def _target_q(self, epochs, assoc, counter) -> np.ndarray:
        side = _side_features(assoc, counter, self.process_cfg.num_bs,
                              self.process_cfg.disruption_epochs)
        return qnet.head_q(self.target_params, self.net_cfg,
                           self._target_feats[epochs], side)

    # online net ------------------------------------------------------------

    def _q_single(self, t: int, j: int, c: int) -> np.ndarray:
        side = _side_features(np.array([j]), np.array([c]),
                              self.process_cfg.num_bs,
                              self.process_cfg.disruption_epochs)
        cols = self.pool_train.cols[t].astype(np.float64)
        return qnet.forward(self.params, self.net_cfg, None, side, cols1=cols)[0]

    def _update(self):
        cfg = self.cfg
        batch = self.buffer.sample(self.rng, cfg.minibatch_size)
        side = _side_features(batch.assoc, batch.counter,
                              self.process_cfg.num_bs,
                              self.process_cfg.disruption_epochs)
        next_q = self._target_q(batch.next_epoch, batch.next_assoc, batch.next_counter)
        targets = td_targets(batch.reward_scaled, next_q, batch.next_mask,
                             batch.terminal, cfg.gamma)
        cols1 = self.pool_train.gather64(batch.epoch)
        q, cache = qnet.forward(self.params, self.net_cfg, None, side,
                                want_cache=True, cols1=cols1)
        rows = np.arange(q.shape[0])
        cols = batch.action - 1
        dq = np.zeros_like(q)
        dq[rows, cols] = 2.0 * (q[rows, cols] - targets) / q.shape[0]
        grads = qnet.backward(self.params, self.net_cfg, cache, dq)
        self.optimizer.step(self.params, grads)

    # environment pass ------------------------------------------------------

    def run_learning_iteration(self, iteration: int):
        """One epsilon-greedy pass over the training segment."""
        cfg = self.cfg
        pcfg = self.process_cfg
        eps = epsilon_at(cfg, iteration)
        if cfg.reset_replay_each_iteration:
            self.buffer.clear()
        length = self.train_segment.num_epochs
        num_bs = pcfg.num_bs
        t, j, c = pcfg.stack_depth - 1, 1, 0
        while t < length - 1:
            if c > 0:
                a = j
            else:
                if self.rng.random() < eps:
                    a = 1 + int(self.rng.integers(num_bs))
                else:
                    a = 1 + int(np.argmax(self._q_single(t, j, c)))
            c2 = next_counter(c, j, a, pcfg)
            r = reward_bps(float(self.cap_train[a - 1, t + 1]), c2)
            self.buffer.append(
                t, j, c, a, r / cfg.reward_scale,
                t + 1, a, c2, action_mask(a, c2, num_bs),
                t + 1 == length - 1,
            )
            self.step_count += 1
            if self.buffer.size >= cfg.minibatch_size and \
                    self.step_count % cfg.update_period == 0:
                self._update()
            if self.step_count % cfg.target_sync_period == 0:
                self._sync_target()
            t, j, c = t + 1, a, c2

    def evaluate(self) -> EvalResult:
        return evaluate_policy(self.params, self.net_cfg, self.eval_segment,
                               self.process_cfg, cameras=self.cameras,
                               pool=self.pool_eval)

    def checkpoint_meta(self) -> dict:
        h, w = self.train_segment.frame_shape
        return {
            "cameras": list(self.cameras),
            "trace_num_cameras": self.train_segment.num_cameras,
            "trace_num_bs": self.train_segment.num_bs,
            "frame_height": h,
            "frame_width": w,
            "epoch_interval_ms": self.train_segment.epoch_interval_ms,
            "train_config": {k: (list(v) if isinstance(v, tuple) else v)
                             for k, v in asdict(self.cfg).items()},
        }


def train(train_segment, eval_segment, cfg: TrainConfig) -> TrainResult:
    """Full training run; keeps the parameters with the best eval average."""
    trainer = DqnTrainer(train_segment, eval_segment, cfg)
    history = []
    best_params = None
    best_avg = -np.inf
    best_iter = -1
    for k in range(cfg.iterations):
        trainer.run_learning_iteration(k)
        result = trainer.evaluate()
        history.append(IterationRecord(k, epsilon_at(cfg, k), result.average_bps))
        if result.average_bps > best_avg:
            best_avg = result.average_bps
            best_iter = k
            best_params = {key: v.copy() for key, v in trainer.params.items()}
    meta = trainer.checkpoint_meta()
    meta["best_iteration"] = best_iter
    meta["best_average_bps"] = best_avg
    return TrainResult(
        best_params=best_params,
        best_iteration=best_iter,
        best_average_bps=best_avg,
        history=history,
        net_config=trainer.net_cfg,
        cameras=trainer.cameras,
        checkpoint_meta=meta,
    )
