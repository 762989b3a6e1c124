"""Agent-based simulator of Fractal Social Organization coordination in emergency healthcare."""

from .config import ConfigError, StrategyKind, WorldConfig
from .engine import run, simulate, step
from .metrics import RunMetrics, aggregate
from .world import World, build_world

__all__ = [
    "ConfigError",
    "RunMetrics",
    "StrategyKind",
    "World",
    "WorldConfig",
    "aggregate",
    "build_world",
    "run",
    "simulate",
    "step",
]
