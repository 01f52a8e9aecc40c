"""
Beacon Privacy Defense - Configuration Management.

Centralized configuration using Pydantic Settings with type validation,
environment variable loading (prefix BEACON_) and flat YAML experiment
files.
"""

from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

import yaml
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.errors import ConfigurationError


class Settings(BaseSettings):
    """
    Runtime settings loaded from flags, config files and the environment.

    Precedence: explicit keyword arguments (CLI flags merged over file
    values) win over BEACON_* environment variables, which win over the
    defaults below.

    Example:
        >>> from src.core.config import settings
        >>> settings.listen
        '127.0.0.1:7410'
        >>> Settings(delta=0.3)
        Traceback (most recent call last):
        ...
        pydantic_core._pydantic_core.ValidationError: ... delta out of range (0, 0.25) ...
    """

    model_config = SettingsConfigDict(
        env_prefix="BEACON_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # ==========================================
    # Application Metadata
    # ==========================================
    app_name: str = Field(default="Beacon Privacy Defense", description="Application name")
    app_version: str = Field(default="1.0.0", description="Application version")

    # ==========================================
    # Defense / Attack Parameters
    # ==========================================
    delta: float = Field(default=1e-6, description="Sequencing error rate, 0 < delta < 0.25")
    theta: float = Field(default=0.0, description="Fixed attack threshold")
    k: int = Field(default=10, ge=1, description="Adaptive attack: K lowest references averaged")
    threat: Literal["fixed", "adaptive"] = Field(default="fixed", description="Attacker model")
    method: str = Field(default="mig", description="Defense registry key")
    seed: int = Field(default=0, description="Base random seed")
    queries: Optional[int] = Field(default=None, ge=0, description="Query only the first N SNVs")
    max_exact_snvs: int = Field(default=24, ge=1, le=40, description="Candidate cap of the exact solvers")
    max_aaf: Optional[float] = Field(default=None, gt=0.0, le=0.5, description="Only flip SNVs with AAF <= max_aaf")
    beta_a: Optional[float] = Field(default=None, gt=0.0, description="Beta a for GKC (default: fitted)")
    beta_b: Optional[float] = Field(default=None, gt=0.0, description="Beta b for GKC (default: fitted)")
    order_seed: Optional[int] = Field(default=None, description="Online query permutation seed (None: ascending)")
    baseline_budget: int = Field(default=50, ge=1, description="Trials per calibration grid point")
    runs: int = Field(default=20, ge=1, description="Clustering attack runs")

    # ==========================================
    # Dataset Generation
    # ==========================================
    beacon_size: int = Field(default=50, ge=1, description="Beacon members in generated datasets")
    reference_size: int = Field(default=50, ge=1, description="Reference individuals in generated datasets")
    snvs: int = Field(default=2000, ge=1, description="SNVs in generated datasets")
    aaf_beta_a: float = Field(default=1.0, gt=0.0, description="Beta a of generated AAFs")
    aaf_beta_b: float = Field(default=5.0, gt=0.0, description="Beta b of generated AAFs")

    # ==========================================
    # Service Configuration
    # ==========================================
    mode: Literal["batch_precomputed", "auth_online", "unauth_online"] = Field(
        default="batch_precomputed", description="Service query-access mode"
    )
    listen: str = Field(default="127.0.0.1:7410", description="Service listen address host:port")
    persistence_path: Optional[Path] = Field(default=None, description="Commitment log directory")
    snapshot_every: int = Field(default=500, ge=1, description="Compact the log every N commitments")

    # ==========================================
    # Sweep Execution
    # ==========================================
    sweep_workers: int = Field(default=1, ge=1, le=64, description="Parallel sweep workers")
    memory_threshold_gb: float = Field(default=0.5, ge=0.0, description="Warn when free memory drops below")

    # ==========================================
    # Logging Configuration
    # ==========================================
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = Field(
        default="INFO", description="Logging level"
    )
    log_format: Literal["json", "text"] = Field(default="text", description="Log output format")
    log_dir: Path = Field(default=Path("logs"), description="Directory for log files")
    log_file_enabled: bool = Field(default=False, description="Also write rotating JSON log files")
    log_rotation: str = Field(default="100 MB", description="Log rotation trigger (size)")
    log_retention: str = Field(default="30 days", description="Log retention duration")

    # ==========================================
    # Validators
    # ==========================================

    @field_validator("log_level", mode="before")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Ensure log level is uppercase."""
        if isinstance(v, str):
            return v.upper()
        return v

    @field_validator("delta")
    @classmethod
    def validate_delta(cls, v: float) -> float:
        """Sequencing error must lie strictly inside (0, 0.25)."""
        if not 0.0 < v < 0.25:
            raise ValueError(f"delta out of range (0, 0.25): {v!r}")
        return v

    @field_validator("listen")
    @classmethod
    def validate_listen(cls, v: str) -> str:
        """Require host:port with a valid port."""
        host, sep, port = v.rpartition(":")
        if not sep or not host or not port.isdigit() or not 0 <= int(port) <= 65535:
            raise ValueError(f"listen address must be host:port, got {v!r}")
        return v

    # ==========================================
    # Computed Properties
    # ==========================================

    @property
    def host(self) -> str:
        return self.listen.rpartition(":")[0]

    @property
    def port(self) -> int:
        return int(self.listen.rpartition(":")[2])

    def get_summary(self) -> dict:
        """
        Configuration echo for logs and run manifests.

        Returns:
            dict: JSON-serializable settings (paths as strings).
        """
        return {
            key: (str(value) if isinstance(value, Path) else value)
            for key, value in self.model_dump().items()
        }


# ==========================================
# Config Files
# ==========================================

def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a flat `key: value` YAML experiment file.

    Args:
        path: Config file path.

    Returns:
        dict: Setting names to values.

    Raises:
        ConfigurationError: If the file is missing, not a mapping, or nested.

    Example:
        >>> load_config_file("config/defaults.yaml")["method"]
        'mig'
    """
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigurationError(f"config file not found: {path}", path=str(path)) from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"config file is not valid YAML: {path}: {e}", path=str(path)) from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file must be a flat key: value mapping: {path}", path=str(path))
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise ConfigurationError(f"config key '{key}' must be a scalar (nested values are not supported)", key=key)
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def build_settings(
    config_file: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> Settings:
    """
    Merge a config file and explicit overrides over the environment.

    Raises:
        ConfigurationError: On unreadable files or invalid values.
    """
    merged: Dict[str, Any] = {}
    if config_file is not None:
        merged.update(load_config_file(config_file))
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return Settings(**merged)
    except ValidationError as e:
        messages = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg'].removeprefix('Value error, ')}"
            for err in e.errors()
        )
        raise ConfigurationError(messages) from e


# ==========================================
# Global Settings Instance
# ==========================================

settings = Settings()


def get_settings() -> Settings:
    """
    Get the global settings instance.

    Returns:
        Settings: Application settings.
    """
    return settings


def reload_settings() -> Settings:
    """
    Reload settings from environment variables.

    Returns:
        Settings: New settings instance.

    Example:
        >>> import os
        >>> os.environ['BEACON_LISTEN'] = '0.0.0.0:9000'
        >>> reload_settings().port
        9000
    """
    global settings
    settings = Settings()
    return settings
