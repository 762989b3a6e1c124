from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields, replace


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending setting."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class StrategyKind(enum.Enum):
    TRADITIONAL = "to"
    PERFECT_ORACLE = "po"
    FSO = "fso"

    @classmethod
    def parse(cls, text: str) -> StrategyKind:
        key = text.strip().lower()
        aliases = {
            "to": cls.TRADITIONAL, "traditional": cls.TRADITIONAL,
            "po": cls.PERFECT_ORACLE, "perfect_oracle": cls.PERFECT_ORACLE, "perfectoracle": cls.PERFECT_ORACLE,
            "fso": cls.FSO,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ConfigError("strategy", f"unknown strategy {text!r}") from None


@dataclass(frozen=True)
class WorldConfig:
    width: float = 100.0
    height: float = 100.0
    n_hospitals: int = 4
    n_doctors: int = 15
    n_ambulances: int = 8
    n_appliances: int = 70
    n_individuals: int = 100
    n_residents: int = 2
    sickness_probability: float = 0.09
    threshold_ticks: int = 200
    total_ticks: int = 3000
    strategy: StrategyKind = StrategyKind.FSO
    flooding_threshold: int = 8
    individual_speed: float = 0.5
    ambulance_speed: float = 2.0
    activity_min_ticks: int = 100
    activity_max_ticks: int = 200
    treatment_min_ticks: int = 20
    treatment_max_ticks: int = 60
    walk_company_probability: float = 0.5

    def validate(self) -> WorldConfig:
        if self.width <= 0:
            raise ConfigError("width", "grid width must be positive")
        if self.height <= 0:
            raise ConfigError("height", "grid height must be positive")
        if self.n_hospitals < 1:
            raise ConfigError("n_hospitals", "at least one hospital is required")
        for key in ("n_doctors", "n_ambulances", "n_appliances", "n_individuals", "threshold_ticks", "total_ticks"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "must be >= 0")
        if self.n_residents < 1:
            raise ConfigError("n_residents", "at least one residents community is required")
        for key in ("sickness_probability", "walk_company_probability"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(key, f"must lie in [0, 1], got {getattr(self, key)}")
        if self.flooding_threshold < 0:
            raise ConfigError("flooding_threshold", "must be >= 0")
        for key in ("individual_speed", "ambulance_speed"):
            if getattr(self, key) <= 0:
                raise ConfigError(key, "speed must be positive")
        if not 0 < self.activity_min_ticks <= self.activity_max_ticks:
            raise ConfigError("activity_min_ticks", "need 0 < activity_min_ticks <= activity_max_ticks")
        if not 0 < self.treatment_min_ticks <= self.treatment_max_ticks:
            raise ConfigError("treatment_min_ticks", "need 0 < treatment_min_ticks <= treatment_max_ticks")
        if not isinstance(self.strategy, StrategyKind):
            raise ConfigError("strategy", f"not a strategy: {self.strategy!r}")
        return self

    def with_(self, **changes) -> WorldConfig:
        return replace(self, **changes)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d


WORLD_KEYS = {f.name: f.type for f in fields(WorldConfig)}
