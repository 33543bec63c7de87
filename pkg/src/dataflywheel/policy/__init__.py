from .base import HORIZON, BasePolicy, cosine_alpha_bar, ddim_timesteps
from .combined import (
    RESIDUAL_SCALE,
    ChunkRunner,
    CombinedPolicy,
    MixingSchedule,
    PolicyController,
    combine,
    combine_unclipped,
    epsilon,
)
from .residual import ResidualPolicy

__all__ = [
    "HORIZON",
    "RESIDUAL_SCALE",
    "BasePolicy",
    "ChunkRunner",
    "CombinedPolicy",
    "MixingSchedule",
    "PolicyController",
    "ResidualPolicy",
    "combine",
    "combine_unclipped",
    "cosine_alpha_bar",
    "ddim_timesteps",
    "epsilon",
]
