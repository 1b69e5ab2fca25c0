from .model import Batch, ModelConfig, Targets, WorldModel, encode, td_update
from .nets import MLP
from .planner import Planner, PlannerConfig, plan, rollout_score

__all__ = [
    "Batch",
    "MLP",
    "ModelConfig",
    "Planner",
    "PlannerConfig",
    "Targets",
    "WorldModel",
    "encode",
    "plan",
    "rollout_score",
    "td_update",
]
