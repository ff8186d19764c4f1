"""Deterministic Raft edge-cluster simulator with an analytic latency model
and a DDPG agent that biases leader election toward the lowest-latency node."""

from .latency import (
    ClusterGeometry,
    LatencyBreakdown,
    LatencyParams,
    NodeResources,
)
from .raft import RaftNodeState, Role
from .sim import ClusterSim, SimConfig
from .env import EnvConfig, MecEnv
from .ddpg import AgentConfig, AgentNets, train

__all__ = [
    "AgentConfig",
    "AgentNets",
    "ClusterGeometry",
    "ClusterSim",
    "EnvConfig",
    "LatencyBreakdown",
    "LatencyParams",
    "MecEnv",
    "NodeResources",
    "RaftNodeState",
    "Role",
    "SimConfig",
    "train",
]
