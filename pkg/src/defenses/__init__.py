"""Beacon defenses: batch, online, unauthenticated and baselines."""

from src.defenses.base import BaseDefense, DefenseResult, post_check
from src.defenses.registry import DefenseRegistry

__all__ = ["BaseDefense", "DefenseResult", "DefenseRegistry", "post_check"]
