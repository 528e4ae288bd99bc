from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, List, Optional, Sequence

STATUSES = ("pending", "in_progress", "completed", "failed")

REPLICATION_STEPS = (
    "Draw population",
    "Researcher exposure",
    "Train GCA",
    "Validity test",
    "Direct effect",
)


@dataclass
class RunStep:
    name: str
    status: str = "pending"  # 'pending', 'in_progress', 'completed', 'failed'
    start_time: Optional[datetime] = None
    end_time: Optional[datetime] = None
    details: Dict = field(default_factory=dict)

    @property
    def duration(self) -> Optional[float]:
        if self.start_time and self.end_time:
            return (self.end_time - self.start_time).total_seconds()
        return None


class RunProgressTracker:
    """Step-by-step status of one replication; the Streamlit page renders it."""

    def __init__(self, steps: Sequence[str] = REPLICATION_STEPS):
        self.step_names = tuple(steps)
        self.steps: List[RunStep] = []
        self.current_step_index = 0
        self.initialize_workflow()

    def initialize_workflow(self):
        self.steps = [RunStep(name) for name in self.step_names]
        self.current_step_index = 0

    def _step(self, step_index: int) -> Optional[RunStep]:
        if 0 <= step_index < len(self.steps):
            return self.steps[step_index]
        return None

    def start_step(self, step_index: int, details: Optional[Dict] = None):
        step = self._step(step_index)
        if step is None:
            return
        step.status = "in_progress"
        step.start_time = datetime.now()
        if details:
            step.details.update(details)
        self.current_step_index = step_index

    def complete_step(self, step_index: int, details: Optional[Dict] = None):
        step = self._step(step_index)
        if step is None:
            return
        step.status = "completed"
        step.end_time = datetime.now()
        if details:
            step.details.update(details)

    def skip_step(self, step_index: int, reason: str):
        self.start_step(step_index)
        self.complete_step(step_index, {"Status": f"Skipped - {reason}"})

    def fail_step(self, step_index: int, error_details: Dict):
        step = self._step(step_index)
        if step is None:
            return
        step.status = "failed"
        step.end_time = datetime.now()
        step.details = dict(error_details)

    def timings(self) -> Dict[str, float]:
        """Seconds spent per finished step."""
        return {step.name: round(step.duration, 6) for step in self.steps
                if step.duration is not None}
