from datetime import datetime
from typing import Any, Dict, List, Optional, Union

from typing_extensions import TypedDict


class StepRecord(TypedDict):
    """One optimizer step of a training run."""
    step: int
    epoch: int
    loss: float
    lr: float
    lam: Optional[float]


class CurvePoint(TypedDict):
    """Held-out metric measured during training."""
    step: int
    metric: str
    value: float


class WorkflowStep(TypedDict):
    """Represents one stage transition of a command or experiment."""
    stage: str
    action: str
    detail: Dict[str, Any]
    timestamp: str


class RunState(TypedDict):
    """Represents the complete state of a training run."""
    # Core state
    role: str
    plan_fingerprint: str
    total_steps: int
    step: int

    # Histories
    history: List[StepRecord]
    curve: List[CurvePoint]
    workflow_history: List[WorkflowStep]

    # Additional metadata
    error: Optional[str]
    is_complete: bool


def new_run_state(role: str, plan_fingerprint: str, total_steps: int) -> RunState:
    return {
        "role": role,
        "plan_fingerprint": plan_fingerprint,
        "total_steps": total_steps,
        "step": 0,
        "history": [],
        "curve": [],
        "workflow_history": [],
        "error": None,
        "is_complete": False,
    }


def record_workflow(state: "Union[RunState, ExperimentState]", stage: str, action: str, **detail: Any) -> None:
    state["workflow_history"].append({
        "stage": stage,
        "action": action,
        "detail": detail,
        "timestamp": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
    })


class ExperimentState(TypedDict):
    """Represents one seed of a multi-stage experiment."""
    seed: int
    stage: str
    metrics: Dict[str, float]
    runs: Dict[str, RunState]
    workflow_history: List[WorkflowStep]
    error: Optional[str]
    is_complete: bool


def new_experiment_state(seed: int) -> ExperimentState:
    return {
        "seed": seed,
        "stage": "start",
        "metrics": {},
        "runs": {},
        "workflow_history": [],
        "error": None,
        "is_complete": False,
    }
