"""
Beacon Privacy Defense - File Utilities.

Output directories, content hashes and the run manifest written next to
every CLI output.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from loguru import logger


MANIFEST_NAME = "manifest.json"
HASH_CHUNK = 1 << 20


def ensure_directory(directory: Union[str, Path]) -> Path:
    """
    Ensure a directory exists, create if it doesn't.

    Args:
        directory: Path to directory.

    Returns:
        Path: The directory path (created if needed).

    Example:
        >>> out = ensure_directory(Path("runs/mig"))
        >>> assert out.exists()
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def file_sha256(path: Union[str, Path]) -> str:
    """Hex SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(HASH_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(body: Dict[str, Any], output_path: Union[str, Path]) -> Path:
    """
    Write a JSON document with sorted keys and a trailing newline.

    Args:
        body: JSON-serializable mapping.
        output_path: Destination file.

    Returns:
        Path: Path to written JSON file.
    """
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8") as f:
        json.dump(body, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    logger.debug(f"JSON written: {output_path}")
    return output_path


@dataclass
class RunManifest:
    """
    Everything needed to rerun a CLI command.

    Attributes:
        command: Subcommand name.
        argv: Command-line arguments as given.
        seed: Base random seed.
        config: Settings echo.
        inputs: Input path -> SHA-256.
        outputs: Output path -> SHA-256.
        timings: ResourceMonitor statistics.
    """

    command: str
    argv: List[str]
    seed: int
    config: Dict[str, Any]
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, Any] = field(default_factory=dict)

    def add_inputs(self, paths: Sequence[Optional[Union[str, Path]]]) -> None:
        for p in paths:
            if p is not None and Path(p).is_file():
                self.inputs[str(p)] = file_sha256(p)

    def add_outputs(self, paths: Sequence[Union[str, Path]]) -> None:
        for p in paths:
            self.outputs[str(p)] = file_sha256(p)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "argv": list(self.argv),
            "seed": self.seed,
            "config": self.config,
            "inputs": dict(self.inputs),
            "outputs": dict(self.outputs),
            "timings": self.timings,
        }

    def write(self, out_dir: Union[str, Path]) -> Path:
        """Write manifest.json into out_dir."""
        path = write_json(self.to_dict(), Path(out_dir) / MANIFEST_NAME)
        logger.info(f"Manifest written: {path} ({len(self.outputs)} outputs)")
        return path
