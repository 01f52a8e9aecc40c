"""
Beacon Privacy Defense - Defense Registry.

Centralized registry of the available defenses under short method keys.
"""

from typing import Any, Dict, List, Optional, Type

from loguru import logger

from src.core.config import Settings
from src.core.errors import ConfigurationError
from src.defenses.base import BaseDefense
from src.defenses.baselines import RandomFlippingDefense, RandomizedResponseDefense
from src.defenses.batch import (
    AdaptiveMigDefense,
    ExactDefense,
    GkcDefense,
    GmbcDefense,
    MigDefense,
)
from src.defenses.online import (
    AdaptiveOnlineGreedyDefense,
    OnlineGreedyDefense,
    UnauthExactDefense,
    UnauthGreedyDefense,
)


DEFENSE_CLASSES: List[Type[BaseDefense]] = [
    ExactDefense,
    GmbcDefense,
    GkcDefense,
    MigDefense,
    AdaptiveMigDefense,
    OnlineGreedyDefense,
    AdaptiveOnlineGreedyDefense,
    UnauthGreedyDefense,
    UnauthExactDefense,
    RandomFlippingDefense,
    RandomizedResponseDefense,
]


class DefenseRegistry:
    """
    Registry of Beacon defenses.

    Example:
        >>> registry = DefenseRegistry()
        >>> registry.get_names()
        ['exact', 'gmbc', 'gkc', 'mig', 'amig', 'og', 'oga', 'omig', 'unauth_exact', 'rf', 'dp']

        >>> mig = registry.get("mig")
        >>> result = mig.run(instance, ThreatSpec.fixed(0.0))
    """

    def __init__(self):
        """Initialize the registry and register every known defense."""
        self._classes: Dict[str, Type[BaseDefense]] = {}
        self._defenses: Dict[str, BaseDefense] = {}
        self._discover_defenses()

    def _discover_defenses(self) -> None:
        for defense_class in DEFENSE_CLASSES:
            key = defense_class.name.lower()
            self._classes[key] = defense_class
            self._defenses[key] = defense_class()
            logger.debug(f"Registered defense: {defense_class.name} v{defense_class.version}")
        logger.debug(f"Total defenses registered: {len(self._defenses)}")

    def get(self, name: str) -> Optional[BaseDefense]:
        """
        Default-configured defense by key (case-insensitive).

        Returns:
            BaseDefense: Instance, or None if the key is unknown.
        """
        return self._defenses.get(name.lower())

    def create(self, name: str, **options: Any) -> BaseDefense:
        """
        New defense instance with constructor options.

        Raises:
            ConfigurationError: If the key is unknown or an option is rejected.
        """
        defense_class = self._classes.get(name.lower())
        if defense_class is None:
            raise ConfigurationError(
                f"unknown method '{name}'; choose from {', '.join(self.get_names())}", method=name
            )
        try:
            return defense_class(**options)
        except TypeError as e:
            raise ConfigurationError(f"invalid options for '{name}': {e}", method=name) from e

    def create_from_settings(self, name: str, settings: Settings) -> BaseDefense:
        """New defense configured from the relevant Settings fields."""
        key = name.lower()
        options: Dict[str, Any] = {}
        if key in ("exact", "omig", "unauth_exact"):
            options["max_m"] = settings.max_exact_snvs
        elif key == "gkc":
            options.update(beta_a=settings.beta_a, beta_b=settings.beta_b)
        elif key in ("og", "oga"):
            options["order_seed"] = settings.order_seed
        elif key in ("rf", "dp"):
            options.update(seed=settings.seed, budget=settings.baseline_budget)
        return self.create(key, **options)

    def get_available(self) -> List[BaseDefense]:
        return list(self._defenses.values())

    def get_names(self) -> List[str]:
        return list(self._defenses.keys())

    def has_defense(self, name: str) -> bool:
        return name.lower() in self._defenses

    def get_capabilities(self) -> Dict[str, Dict[str, bool]]:
        """Capabilities of every registered defense, by key."""
        return {name: defense.get_capabilities() for name, defense in self._defenses.items()}

    def count(self) -> int:
        return len(self._defenses)
