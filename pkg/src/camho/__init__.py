"""Camera-aided proactive handover: trace simulator, DQN agent, baselines."""

from .agent import (
    DqnTrainer,
    EvalResult,
    TrainConfig,
    TrainResult,
    epsilon_at,
    evaluate_policy,
    select_action,
    td_targets,
    train,
)
from .baselines import DpResult, dp_oracle, reactive_policy, run_policy, static_policy
from .channel import LinkBudget, capacity_bps, dbm_to_mw, mw_to_dbm
from .errors import (
    CompatibilityError,
    EndOfTraceError,
    InsufficientDataError,
    ProtocolViolationError,
    TraceFormatError,
)
from .net import (
    NetConfig,
    backward,
    encode_state,
    forward,
    grad_check,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .process import (
    DecisionState,
    ProcessConfig,
    StepOutcome,
    action_mask,
    action_set,
    initial_state,
    next_counter,
    reward_bps,
    step,
)
from .scenario import (
    SceneConfig,
    load_scene,
    reference_scenario,
    save_scene,
    synthesize_trace,
)
from .trace import Trace
from .trace import load as load_trace
from .trace import save as save_trace
from .trace import split as split_trace
from .trace import validate as validate_trace

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
