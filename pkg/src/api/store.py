"""
Beacon Privacy Defense - Commitment Store.

Durable record of every published response and of each authenticated
session's query history: an append-only JSON-lines log, fsynced before a
response leaves the service, compacted into a snapshot file.

Log lines:
    {"snv": J, "resp": 0|1, "flipped": bool, "t": seq}    commitment
    {"token": KEY, "snv": J, "t": seq}                    session query

KEY is a SHA-256 digest of the session token; tokens are never stored.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple, Union

from loguru import logger

from src.core.errors import SnapshotError
from src.defenses.online import Commitment


LOG_NAME = "commitments.log"
SNAPSHOT_NAME = "snapshot.json"
SNAPSHOT_VERSION = 1


def session_key(token: str) -> str:
    """Stable storage key for a session token."""
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


class SessionStore:
    """
    Published commitments and session histories, optionally persisted.

    Only entries that are durable appear in `published` and `sessions`,
    so readers of those maps never see an answer that could be lost in a
    crash.

    Example:
        >>> store = SessionStore(Path("state"))
        >>> store.open()
        >>> store.append(commitment=(3, Commitment(response=0, flipped=True)))
        >>> store.published[3].response
        0
    """

    def __init__(self, path: Optional[Union[str, Path]] = None, snapshot_every: int = 500):
        """
        Initialize the store.

        Args:
            path: Persistence directory (None: memory only).
            snapshot_every: Compact after this many appended records.
        """
        self.path = Path(path) if path is not None else None
        self.snapshot_every = snapshot_every
        self.published: Dict[int, Commitment] = {}
        self.sessions: Dict[str, List[int]] = {}
        self._session_sets: Dict[str, Set[int]] = {}
        self.seq = 0
        self._since_snapshot = 0
        self._fh = None

    @property
    def log_path(self) -> Optional[Path]:
        return self.path / LOG_NAME if self.path else None

    @property
    def snapshot_path(self) -> Optional[Path]:
        return self.path / SNAPSHOT_NAME if self.path else None

    # ==========================================
    # Recovery
    # ==========================================

    def open(self) -> "SessionStore":
        """
        Restore snapshot and log, then open the log for appending.

        Raises:
            SnapshotError: If the snapshot or a complete log line is corrupt.
        """
        if self.path is None:
            return self
        self.path.mkdir(parents=True, exist_ok=True)
        snapshot_seq = self._load_snapshot()
        self._replay_log(snapshot_seq)
        self._fh = open(self.log_path, "ab")
        logger.info(
            f"Commitment store opened at {self.path}: {len(self.published)} commitments, "
            f"{len(self.sessions)} sessions, seq={self.seq}"
        )
        return self

    def _load_snapshot(self) -> int:
        path = self.snapshot_path
        if not path.exists():
            return 0
        raw = path.read_bytes()
        try:
            data = json.loads(raw.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise SnapshotError("snapshot is not UTF-8", path=str(path), offset=e.start) from e
        except json.JSONDecodeError as e:
            raise SnapshotError(f"corrupt snapshot: {e.msg}", path=str(path), offset=e.pos) from e
        try:
            if data["version"] != SNAPSHOT_VERSION:
                raise SnapshotError(f"unsupported snapshot version {data['version']!r}", path=str(path), offset=0)
            for entry in data["commitments"]:
                self._apply_commitment(int(entry["snv"]), Commitment(int(entry["resp"]), bool(entry["flipped"])))
            for key, history in data["sessions"].items():
                for snv in history:
                    self._apply_session(str(key), int(snv))
            self.seq = int(data["t"])
        except (KeyError, TypeError, ValueError) as e:
            raise SnapshotError(f"corrupt snapshot structure: {e}", path=str(path), offset=0) from e
        return self.seq

    def _replay_log(self, after_seq: int) -> None:
        path = self.log_path
        if not path.exists():
            return
        raw = path.read_bytes()
        offset = 0
        while offset < len(raw):
            end = raw.find(b"\n", offset)
            if end < 0:
                # torn final write: its response was never sent
                logger.warning(f"Dropping incomplete log record at byte offset {offset} in {path}")
                with open(path, "r+b") as fh:
                    fh.truncate(offset)
                    fh.flush()
                    os.fsync(fh.fileno())
                break
            line = raw[offset:end]
            if line.strip():
                self._replay_line(line, offset, after_seq)
            offset = end + 1

    def _replay_line(self, line: bytes, offset: int, after_seq: int) -> None:
        path = str(self.log_path)
        try:
            record = json.loads(line.decode("utf-8"))
            t = int(record["t"])
            snv = int(record["snv"])
            if t <= after_seq:
                return
            if "token" in record:
                self._apply_session(str(record["token"]), snv)
            else:
                self._apply_commitment(snv, Commitment(int(record["resp"]), bool(record["flipped"])))
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise SnapshotError(f"corrupt log record: {e}", path=path, offset=offset) from e
        self.seq = max(self.seq, t)

    def _apply_commitment(self, snv: int, commitment: Commitment) -> None:
        existing = self.published.get(snv)
        if existing is not None and existing != commitment:
            raise SnapshotError(f"conflicting commitments for SNV {snv}", path=str(self.path))
        self.published[snv] = commitment

    def _apply_session(self, key: str, snv: int) -> None:
        seen = self._session_sets.setdefault(key, set())
        if snv not in seen:
            seen.add(snv)
            self.sessions.setdefault(key, []).append(snv)

    # ==========================================
    # Writes
    # ==========================================

    def has_session_query(self, key: str, snv: int) -> bool:
        return snv in self._session_sets.get(key, ())

    def append(
        self,
        commitment: Optional[Tuple[int, Commitment]] = None,
        session: Optional[Tuple[str, int]] = None,
    ) -> int:
        """
        Durably record a new commitment and/or session query.

        The records are written and fsynced before the in-memory maps
        change; callers respond only after this returns.

        Returns:
            int: Sequence number of the last record.
        """
        lines: List[bytes] = []
        if commitment is not None:
            snv, c = commitment
            self.seq += 1
            lines.append(self._line({"snv": snv, "resp": c.response, "flipped": c.flipped, "t": self.seq}))
        if session is not None:
            key, snv = session
            self.seq += 1
            lines.append(self._line({"token": key, "snv": snv, "t": self.seq}))
        if not lines:
            return self.seq

        if self._fh is not None:
            self._fh.write(b"".join(lines))
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._since_snapshot += len(lines)

        if commitment is not None:
            self._apply_commitment(*commitment)
        if session is not None:
            self._apply_session(*session)
        return self.seq

    @staticmethod
    def _line(record: Dict[str, object]) -> bytes:
        return (json.dumps(record, separators=(",", ":")) + "\n").encode("utf-8")

    @property
    def snapshot_due(self) -> bool:
        return self._fh is not None and self._since_snapshot >= self.snapshot_every

    def compact(self) -> int:
        """
        Write a snapshot of everything durable and truncate the log.

        Returns:
            int: Sequence number captured by the snapshot.
        """
        if self.path is None:
            return self.seq
        body = {
            "version": SNAPSHOT_VERSION,
            "t": self.seq,
            "commitments": [
                {"snv": snv, "resp": c.response, "flipped": c.flipped}
                for snv, c in sorted(self.published.items())
            ],
            "sessions": {key: list(history) for key, history in sorted(self.sessions.items())},
        }
        tmp = self.snapshot_path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            fh.write(json.dumps(body, separators=(",", ":")).encode("utf-8"))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.snapshot_path)
        _fsync_dir(self.path)

        if self._fh is not None:
            self._fh.close()
        with open(self.log_path, "wb") as fh:
            fh.flush()
            os.fsync(fh.fileno())
        self._fh = open(self.log_path, "ab")
        self._since_snapshot = 0
        logger.info(f"Compacted commitment log at seq={self.seq} ({len(self.published)} commitments)")
        return self.seq

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
