"""
Beacon Privacy Defense - Beacon Query Service.

Asyncio TCP server speaking newline-delimited JSON. Every SNV has one
public answer: the first decision for it is committed, logged durably and
then returned to every client that asks.

Modes:
    batch_precomputed: flips computed at startup by the configured solver.
    auth_online: Online Greedy per session token, sharing the commitments.
    unauth_online: worst-case flips computed at startup, committed lazily.
"""

import asyncio
import json
from typing import Dict, Optional

import numpy as np
from loguru import logger
from pydantic import ValidationError

from src.api.models import AdminRequest, QueryRequest, ServiceConfig, encode, error, present
from src.api.store import SessionStore, session_key
from src.core.errors import AuthError, ConfigurationError
from src.core.instance import BeaconInstance
from src.core.threat_model import ThreatSpec
from src.defenses.base import BaseDefense
from src.defenses.online import (
    Commitment,
    CommitmentMap,
    OnlineState,
    online_greedy_adaptive_step,
    online_greedy_step,
)
from src.defenses.registry import DefenseRegistry
from src.utils.logging_config import add_session_context


MAX_LINE_BYTES = 64 * 1024


class BeaconService:
    """
    Beacon query service applying a defense live.

    Decisions and log writes run under one asyncio lock; answers for
    SNVs that are already durable are served without taking it.

    Example:
        >>> service = BeaconService(config, instance, SessionStore())
        >>> service.prepare()
        >>> await service.handle_line(b'{"op":"query","snv":0}')
        {'present': 1}
    """

    def __init__(
        self,
        config: ServiceConfig,
        instance: BeaconInstance,
        store: SessionStore,
        defense: Optional[BaseDefense] = None,
    ):
        """
        Initialize the service.

        Args:
            config: Service configuration.
            instance: Loaded Beacon instance.
            store: Opened commitment store.
            defense: Solver for the precomputed modes (default from config).
        """
        self.config = config
        self.instance = instance
        self.store = store
        self.defense = defense
        self.threat = (
            ThreatSpec.adaptive(config.k, instance.split.reference)
            if config.threat == "adaptive"
            else ThreatSpec.fixed(config.theta)
        )
        self.commitments = CommitmentMap()
        self.sessions: Dict[str, OnlineState] = {}
        self.precomputed: Optional[np.ndarray] = None
        self._lock = asyncio.Lock()
        self._server: Optional[asyncio.AbstractServer] = None

    # ==========================================
    # Startup
    # ==========================================

    def prepare(self) -> None:
        """
        Compute precomputed flips and rebuild state from the store.

        Raises:
            ConfigurationError: If the mode and threat cannot be combined.
            InfeasibleError: If the unauthenticated solver has no solution.
        """
        for snv, commitment in self.store.published.items():
            self.commitments.commit(snv, commitment)

        if self.config.mode == "auth_online":
            if not self.threat.is_adaptive and self.threat.theta > 0:
                raise ConfigurationError("auth_online with a fixed threat needs theta <= 0")
            for key, history in self.store.sessions.items():
                state = self._new_state()
                for snv in history:
                    self._step(state, snv)
                self.sessions[key] = state
            logger.info(f"Restored {len(self.sessions)} sessions")
            return

        if self.defense is None:
            method = "omig" if self.config.mode == "unauth_online" else self.config.method
            self.defense = DefenseRegistry().create(method)
        result = self.defense.run(self.instance, self.threat)
        if not result.feasible:
            logger.warning(
                f"{result.method}: precomputed flips leave member {result.witness} exposed; serving them anyway"
            )
        self.precomputed = result.flips.y
        logger.info(f"Precomputed {result.flip_count} flips with {result.method} ({self.config.mode})")

    def _new_state(self) -> OnlineState:
        split = self.instance.split
        n_refs = len(split.reference) if self.threat.is_adaptive else 0
        return OnlineState.new(self.instance.m, len(split.beacon), n_refs, commitments=self.commitments)

    def _step(self, state: OnlineState, snv: int) -> int:
        inst = self.instance
        if self.threat.is_adaptive:
            response, _, _ = online_greedy_adaptive_step(
                state, snv, inst.params, inst.g, inst.split.beacon, self.threat.reference, inst.x, self.threat.K
            )
        else:
            response, _, _ = online_greedy_step(
                state, snv, inst.params, inst.g, inst.split.beacon, inst.x, self.threat.theta
            )
        return response

    # ==========================================
    # Queries
    # ==========================================

    async def query(self, token: Optional[str], snv: int) -> Dict[str, object]:
        """
        Answer one allele-presence query.

        Raises:
            AuthError: If auth_online mode receives no token.
        """
        if not 0 <= snv < self.instance.m:
            return error("unknown_snv")
        auth = self.config.mode == "auth_online"
        if auth and not token:
            raise AuthError("auth_online mode requires a session token")
        key = session_key(token) if auth else None

        published = self.store.published.get(snv)
        if published is not None and (key is None or self.store.has_session_query(key, snv)):
            return present(published.response)

        async with self._lock:
            if auth:
                state = self.sessions.get(key)
                if state is None:
                    state = self.sessions[key] = self._new_state()
                if self.store.has_session_query(key, snv):
                    return present(self.store.published[snv].response)
                response = self._step(state, snv)
                new = snv not in self.store.published
                await asyncio.to_thread(
                    self.store.append,
                    commitment=(snv, self.commitments[snv]) if new else None,
                    session=(key, snv),
                )
            else:
                if snv in self.store.published:
                    return present(self.store.published[snv].response)
                flipped = bool(self.precomputed[snv])
                response = int(self.instance.x[snv]) & int(not flipped)
                commitment = self.commitments.commit(snv, Commitment(response=response, flipped=flipped))
                await asyncio.to_thread(self.store.append, commitment=(snv, commitment))
            if self.store.snapshot_due:
                await asyncio.to_thread(self.store.compact)
        logger.debug(f"answered snv={snv} present={response}")
        return present(response)

    async def handle_line(self, line: bytes) -> Dict[str, object]:
        """Decode one request line and produce its response body."""
        try:
            body = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            return error("bad_request")
        if not isinstance(body, dict):
            return error("bad_request")

        op = body.get("op")
        try:
            if op == "query":
                request = QueryRequest.model_validate(body)
                with add_session_context(request.token):
                    return await self.query(request.token, request.snv)
            admin = AdminRequest.model_validate(body)
        except ValidationError:
            return error("bad_request")
        except AuthError:
            return error("missing_token")

        if admin.op == "ping":
            return {"ok": True, "mode": self.config.mode}
        async with self._lock:
            seq = await asyncio.to_thread(self.store.compact)
        return {"ok": True, "t": seq}

    # ==========================================
    # Network
    # ==========================================

    async def _client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        logger.debug(f"client connected: {peer}")
        try:
            while True:
                try:
                    line = await reader.readline()
                except (asyncio.LimitOverrunError, ValueError):
                    writer.write(encode(error("bad_request")))
                    break
                if not line:
                    break
                if not line.strip():
                    continue
                writer.write(encode(await self.handle_line(line)))
                await writer.drain()
        except ConnectionError as e:
            logger.debug(f"client {peer} dropped: {e}")
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass

    async def start(self) -> asyncio.AbstractServer:
        """
        Bind the listen address.

        Raises:
            ConfigurationError: If the address cannot be bound.
        """
        host, _, port = self.config.listen.rpartition(":")
        try:
            self._server = await asyncio.start_server(self._client, host, int(port), limit=MAX_LINE_BYTES)
        except OSError as e:
            raise ConfigurationError(f"cannot listen on {self.config.listen}: {e}") from e
        sockets = ", ".join(str(s.getsockname()) for s in self._server.sockets)
        logger.info(f"Beacon service ({self.config.mode}) listening on {sockets}")
        return self._server

    async def serve_forever(self) -> None:
        server = await self.start()
        async with server:
            await server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        self.store.close()
