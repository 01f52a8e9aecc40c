"""
Beacon Privacy Defense - Service Wire Models.

Request and response models of the newline-delimited JSON protocol, plus
the validated service configuration.
"""

import json
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from pydantic import BaseModel, Field, model_validator

from src.core.config import Settings
from src.core.errors import ConfigurationError


ServiceMode = Literal["batch_precomputed", "auth_online", "unauth_online"]


class QueryRequest(BaseModel):
    """`{"op":"query","token":T,"snv":J}`"""

    op: Literal["query"]
    token: Optional[str] = Field(None, description="Session token (auth mode)")
    snv: int = Field(..., description="Queried SNV index")


class AdminRequest(BaseModel):
    """`{"op":"snapshot"}` or `{"op":"ping"}`"""

    op: Literal["snapshot", "ping"]


class ServiceConfig(BaseModel):
    """
    Service startup configuration.

    Attributes:
        mode: Query-access mode.
        dataset: Matrix file.
        threat: "fixed" or "adaptive".
        theta: Fixed threshold.
        k: Adaptive K.
        method: Batch solver for batch_precomputed mode.
        listen: host:port.
        persistence_path: Commitment log directory (None: in memory only).
        snapshot_every: Compact the log after this many records.
    """

    mode: ServiceMode = "batch_precomputed"
    dataset: Path
    threat: Literal["fixed", "adaptive"] = "fixed"
    theta: float = 0.0
    k: int = Field(10, ge=1)
    method: str = "mig"
    listen: str = "127.0.0.1:7410"
    persistence_path: Optional[Path] = None
    snapshot_every: int = Field(500, ge=1)

    @model_validator(mode="after")
    def _check_mode(self) -> "ServiceConfig":
        if self.mode == "auth_online" and self.threat == "fixed" and self.theta > 0:
            raise ValueError(f"auth_online with a fixed threat needs theta <= 0, got {self.theta}")
        return self

    @classmethod
    def from_settings(cls, settings: Settings, dataset: Union[str, Path]) -> "ServiceConfig":
        """
        Build from runtime settings.

        Raises:
            ConfigurationError: If the combination is not allowed.
        """
        try:
            return cls(
                mode=settings.mode,
                dataset=Path(dataset),
                threat=settings.threat,
                theta=settings.theta,
                k=settings.k,
                method=settings.method,
                listen=settings.listen,
                persistence_path=settings.persistence_path,
                snapshot_every=settings.snapshot_every,
            )
        except ValueError as e:
            raise ConfigurationError(str(e)) from e


def encode(body: Dict[str, Any]) -> bytes:
    """One response line; compact separators so equal bodies are byte-identical."""
    return (json.dumps(body, separators=(",", ":"), sort_keys=True) + "\n").encode("utf-8")


def present(bit: int) -> Dict[str, int]:
    return {"present": int(bit)}


def error(kind: str) -> Dict[str, str]:
    return {"error": kind}
