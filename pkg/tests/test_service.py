"""
Tests for the Beacon query service and its commitment store.
"""

import asyncio
import json
from pathlib import Path
from typing import Optional

import pytest

from src.api.models import ServiceConfig, encode
from src.api.server import BeaconService
from src.api.store import LOG_NAME, SNAPSHOT_NAME, SessionStore, session_key
from src.core.config import Settings
from src.core.errors import ConfigurationError, SnapshotError
from src.core.instance import load_instance
from src.defenses.online import Commitment


def _query(snv: int, token: Optional[str] = None) -> bytes:
    body = {"op": "query", "snv": snv}
    if token is not None:
        body["token"] = token
    return json.dumps(body).encode("utf-8")


@pytest.fixture
def make_service(f1_matrix_file):
    """
    Build a prepared service on the canonical matrix file.

    Example:
        >>> service = make_service("auth_online", persistence=temp_dir / "state")
    """
    opened = []

    def factory(mode: str = "batch_precomputed", theta: float = 0.0, persistence: Optional[Path] = None,
                **extra) -> BeaconService:
        options = {"listen": "127.0.0.1:0", **extra}
        config = ServiceConfig(
            mode=mode, dataset=f1_matrix_file, theta=theta, persistence_path=persistence, **options
        )
        store = SessionStore(config.persistence_path, config.snapshot_every).open()
        opened.append(store)
        service = BeaconService(config, load_instance(f1_matrix_file, 0.1), store)
        service.prepare()
        return service

    yield factory
    for store in opened:
        store.close()


# ==========================================
# Commitment Store
# ==========================================

@pytest.mark.unit
class TestSessionStore:
    """Append-only log, snapshot and recovery."""

    def test_memory_only(self):
        """Without a path nothing touches the disk."""
        store = SessionStore().open()
        store.append(commitment=(1, Commitment(1, False)))
        assert store.published[1] == Commitment(1, False)
        assert not store.snapshot_due

    def test_reopen_restores(self, temp_dir):
        """Commitments and session histories survive a restart."""
        store = SessionStore(temp_dir).open()
        store.append(commitment=(2, Commitment(0, True)), session=(session_key("alice"), 2))
        store.append(session=(session_key("bob"), 2))
        store.close()

        again = SessionStore(temp_dir).open()
        assert again.published == {2: Commitment(0, True)}
        assert again.sessions == {session_key("alice"): [2], session_key("bob"): [2]}
        assert again.seq == 3
        again.close()

    def test_tokens_never_stored(self, temp_dir):
        """The log holds digests only."""
        store = SessionStore(temp_dir).open()
        store.append(session=(session_key("alice-secret"), 0))
        store.close()
        assert "alice-secret" not in (temp_dir / LOG_NAME).read_text(encoding="utf-8")

    def test_torn_tail_dropped(self, temp_dir):
        """An incomplete last record is discarded and truncated."""
        store = SessionStore(temp_dir).open()
        store.append(commitment=(0, Commitment(0, True)))
        store.close()
        log = temp_dir / LOG_NAME
        intact = log.read_bytes()
        log.write_bytes(intact + b'{"snv":1,"resp"')

        again = SessionStore(temp_dir).open()
        assert list(again.published) == [0]
        assert log.read_bytes() == intact
        again.close()

    def test_corrupt_record(self, temp_dir):
        """A complete but unreadable line is fatal and reports its offset."""
        store = SessionStore(temp_dir).open()
        store.append(commitment=(0, Commitment(0, True)))
        store.close()
        log = temp_dir / LOG_NAME
        good = log.read_bytes()
        log.write_bytes(good + b"garbage\n")
        with pytest.raises(SnapshotError) as info:
            SessionStore(temp_dir).open()
        assert info.value.details["offset"] == len(good)

    def test_conflicting_records(self, temp_dir):
        """Two different answers for one SNV cannot both be durable."""
        (temp_dir / LOG_NAME).write_bytes(
            b'{"snv":0,"resp":1,"flipped":false,"t":1}\n{"snv":0,"resp":0,"flipped":true,"t":2}\n'
        )
        with pytest.raises(SnapshotError, match="conflicting"):
            SessionStore(temp_dir).open()

    def test_compact(self, temp_dir):
        """Compaction empties the log; reopening reads the snapshot."""
        store = SessionStore(temp_dir, snapshot_every=2).open()
        store.append(commitment=(1, Commitment(1, False)))
        store.append(commitment=(3, Commitment(0, False)), session=(session_key("t"), 3))
        assert store.snapshot_due
        assert store.compact() == 3
        store.append(commitment=(0, Commitment(0, True)))
        store.close()
        assert (temp_dir / SNAPSHOT_NAME).exists()

        again = SessionStore(temp_dir).open()
        assert sorted(again.published) == [0, 1, 3]
        assert again.sessions == {session_key("t"): [3]}
        assert again.seq == 4
        again.close()

    def test_corrupt_snapshot(self, temp_dir):
        """A damaged snapshot is reported, not ignored."""
        (temp_dir / SNAPSHOT_NAME).write_text('{"version": 1, "t": ', encoding="utf-8")
        with pytest.raises(SnapshotError):
            SessionStore(temp_dir).open()


# ==========================================
# Query Service
# ==========================================

@pytest.mark.service
class TestBatchService:
    """Precomputed flips served as commitments."""

    async def test_answers(self, make_service):
        """MIG at θ = 0 flips SNV 0 only."""
        service = make_service()
        assert service.precomputed.tolist() == [1, 0, 0, 0]
        assert await service.handle_line(_query(0)) == {"present": 0}
        assert await service.handle_line(_query(1)) == {"present": 1}
        assert await service.handle_line(_query(3)) == {"present": 0}
        assert service.store.published[0] == Commitment(0, True)

    async def test_errors(self, make_service):
        """Malformed lines and unknown SNVs get error bodies."""
        service = make_service()
        assert await service.handle_line(b"not json") == {"error": "bad_request"}
        assert await service.handle_line(b"[1, 2]") == {"error": "bad_request"}
        assert await service.handle_line(b'{"op":"query"}') == {"error": "bad_request"}
        assert await service.handle_line(b'{"op":"drop"}') == {"error": "bad_request"}
        assert await service.handle_line(_query(9)) == {"error": "unknown_snv"}
        assert await service.handle_line(_query(-1)) == {"error": "unknown_snv"}

    async def test_admin(self, make_service, temp_dir):
        """ping reports the mode; snapshot compacts."""
        service = make_service(persistence=temp_dir / "state")
        assert await service.handle_line(b'{"op":"ping"}') == {"ok": True, "mode": "batch_precomputed"}
        await service.handle_line(_query(0))
        assert await service.handle_line(b'{"op":"snapshot"}') == {"ok": True, "t": 1}

    async def test_unauth_mode(self, make_service):
        """unauth_online precomputes worst-case flips."""
        service = make_service(mode="unauth_online", theta=-1.1)
        assert service.precomputed.tolist() == [1, 0, 0, 0]
        assert await service.handle_line(_query(2)) == {"present": 1}


@pytest.mark.service
class TestAuthOnlineService:
    """Online Greedy per session token with shared commitments."""

    async def test_session_order(self, make_service):
        """Order (2, 0, 1) answers (0, 0, 1)."""
        service = make_service(mode="auth_online")
        answers = [(await service.handle_line(_query(q, "alice")))["present"] for q in (2, 0, 1)]
        assert answers == [0, 0, 1]

    async def test_second_session_sees_commitments(self, make_service):
        """Another token gets the same public answers."""
        service = make_service(mode="auth_online")
        for q in (2, 0, 1):
            await service.handle_line(_query(q, "alice"))
        assert [(await service.handle_line(_query(q, "bob")))["present"] for q in (0, 1, 2)] == [0, 1, 0]
        assert service.sessions[session_key("bob")].flips_so_far == 0

    async def test_missing_token(self, make_service):
        """auth_online requires a token."""
        service = make_service(mode="auth_online")
        assert await service.handle_line(_query(0)) == {"error": "missing_token"}

    async def test_restart_resumes_sessions(self, make_service, temp_dir):
        """After a restart a session continues exactly where it stopped."""
        state = temp_dir / "state"
        first = make_service(mode="auth_online", persistence=state)
        for q in (2, 0):
            await first.handle_line(_query(q, "alice"))
        await first.close()

        second = make_service(mode="auth_online", persistence=state)
        assert second.sessions[session_key("alice")].history == [2, 0]
        assert await second.handle_line(_query(1, "alice")) == {"present": 1}
        assert await second.handle_line(_query(2, "alice")) == {"present": 0}

    def test_positive_theta_rejected(self, f1_matrix_file):
        """A fixed threat with θ > 0 cannot run online."""
        with pytest.raises(ConfigurationError):
            ServiceConfig.from_settings(Settings(mode="auth_online", theta=0.5), f1_matrix_file)


@pytest.mark.service
@pytest.mark.integration
class TestTcp:
    """Newline-delimited JSON over TCP."""

    async def test_round_trip(self, make_service):
        """Two clients receive byte-identical answers."""
        service = make_service()
        server = await service.start()
        port = server.sockets[0].getsockname()[1]
        try:
            lines = []
            for _ in range(2):
                reader, writer = await asyncio.open_connection("127.0.0.1", port)
                writer.write(_query(0) + b"\n\n" + b'{"op":"ping"}\n')
                await writer.drain()
                lines.append(await reader.readline())
                assert json.loads(await reader.readline()) == {"ok": True, "mode": "batch_precomputed"}
                writer.close()
                await writer.wait_closed()
            assert lines[0] == lines[1] == encode({"present": 0})
        finally:
            await service.close()

    async def test_oversized_line(self, make_service):
        """A line over the limit gets bad_request and the connection closes."""
        service = make_service()
        server = await service.start()
        port = server.sockets[0].getsockname()[1]
        try:
            reader, writer = await asyncio.open_connection("127.0.0.1", port)
            writer.write(b"x" * 70_000 + b"\n")
            await writer.drain()
            assert await reader.readline() == encode({"error": "bad_request"})
            assert await reader.readline() == b""
            writer.close()
            await writer.wait_closed()
        finally:
            await service.close()

    async def test_bind_failure(self, make_service):
        """An address in use is a configuration error."""
        service = make_service()
        server = await service.start()
        port = server.sockets[0].getsockname()[1]
        clash = make_service(listen=f"127.0.0.1:{port}")
        try:
            with pytest.raises(ConfigurationError, match="cannot listen"):
                await clash.start()
        finally:
            await service.close()


# ==========================================
# Golden Transcripts
# ==========================================

SNAPSHOT = object()

TRANSCRIPTS = {
    "auth_fixed": (
        {"mode": "auth_online", "theta": 0.0},
        [("alice", 2), ("alice", 0), SNAPSHOT, ("alice", 1), ("bob", 0), ("bob", 1), ("bob", 2)],
        [0, 0, None, 1, 0, 1, 0],
    ),
    "auth_adaptive": (
        {"mode": "auth_online", "threat": "adaptive", "k": 2},
        [("alice", 0), ("alice", 1), SNAPSHOT, ("alice", 2), ("bob", 3), ("bob", 0)],
        [0, 1, None, 1, 0, 0],
    ),
    "unauth": (
        {"mode": "unauth_online", "theta": -1.1},
        [(None, 0), (None, 1), SNAPSHOT, (None, 2), (None, 3)],
        [0, 1, None, 1, 0],
    ),
}


async def _play(service: BeaconService, steps) -> list:
    lines = []
    for step in steps:
        line = b'{"op":"snapshot"}' if step is SNAPSHOT else _query(step[1], step[0])
        lines.append(encode(await service.handle_line(line)))
    return lines


@pytest.mark.service
@pytest.mark.integration
class TestGoldenTranscripts:
    """Recorded multi-client sessions replay byte-identically across a restart."""

    @pytest.mark.parametrize("name", sorted(TRANSCRIPTS))
    async def test_recorded_answers(self, make_service, temp_dir, name):
        """Every answer matches the recorded transcript."""
        options, steps, expected = TRANSCRIPTS[name]
        service = make_service(persistence=temp_dir / "state", **options)
        lines = await _play(service, steps)
        for line, bit in zip(lines, expected):
            if bit is not None:
                assert line == encode({"present": bit})

    @pytest.mark.parametrize("name", sorted(TRANSCRIPTS))
    async def test_restart_after_snapshot(self, make_service, temp_dir, name):
        """Restoring from the snapshot mid-session changes no byte of output."""
        options, steps, _ = TRANSCRIPTS[name]
        cut = steps.index(SNAPSHOT) + 1

        straight = await _play(make_service(persistence=temp_dir / "straight", **options), steps)

        first = make_service(persistence=temp_dir / "restarted", **options)
        head = await _play(first, steps[:cut])
        await first.close()
        second = make_service(persistence=temp_dir / "restarted", **options)
        tail = await _play(second, steps[cut:])

        assert head + tail == straight
