from .core import (
    BEGIN_ACTION,
    Action,
    Environment,
    EnvState,
    Observation,
    OutcomeReward,
    Task,
    read_task_manifest,
    write_task_manifest,
)
from .craftdag import CraftDag
from .gridnav import GridNav, GridSpec
from .oracle import QOracle, exact_q

from ..errors import ConfigurationError

_FAMILIES = {
    "gridnav": GridNav,
    "craftdag": CraftDag,
}


def make_env(config: dict) -> Environment:
    """Build an environment family from a config mapping (see README schema)."""
    try:
        family = config["family"]
    except KeyError:
        raise ConfigurationError("environment config missing 'family'") from None
    try:
        cls = _FAMILIES[family]
    except KeyError:
        raise ConfigurationError(f"unknown environment family {family!r}") from None
    return cls.from_config(config)


__all__ = [
    "Action",
    "BEGIN_ACTION",
    "CraftDag",
    "Environment",
    "EnvState",
    "GridNav",
    "GridSpec",
    "Observation",
    "OutcomeReward",
    "QOracle",
    "Task",
    "exact_q",
    "make_env",
    "read_task_manifest",
    "write_task_manifest",
    "ConfigurationError",
]
