"""Beacon query service: wire models, commitment store and TCP server."""

from src.api.server import BeaconService
from src.api.store import SessionStore

__all__ = ["BeaconService", "SessionStore"]
