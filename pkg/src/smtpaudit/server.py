"""TCP front end, credential store, queue ids and the on-disk spool."""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import random
import re
import secrets
import socket
import socketserver
import tempfile
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Protocol

from .protocol import render_reply, strip_eol
from .session import (
    CloseConnection,
    Connected,
    EnqueueMessage,
    Policy,
    SessionState,
    TIMEOUT,
    greet,
    reply,
    step,
)

logger = logging.getLogger(__name__)

QUEUE_ID_RE = re.compile(r"^[0-9A-F]{11}$")
MAX_WIRE_LINE = 65536
SPOOL_ERROR = reply(421, "4.3.0", "Error: queue file write error")
TOO_MANY_CONNECTIONS = reply(421, "4.3.2", "Too many connections, try again later")


class BindError(OSError):
    pass


class SpoolIoError(OSError):
    pass


class ReadTimeout(Exception):
    pass


# ---------------------------------------------------------------------------
# credentials


def _digest(salt_hex: str, password: str) -> str:
    return hashlib.sha256(bytes.fromhex(salt_hex) + password.encode("utf-8")).hexdigest()


# stands in for a real entry so unknown users cost the same hashing work
_DUMMY_SALT = "00" * 16
_DUMMY_DIGEST = _digest(_DUMMY_SALT, "")


@dataclass
class CredentialStore:
    """username -> (salt hex, SHA-256(salt || password) hex)."""

    entries: dict = field(default_factory=dict)

    @staticmethod
    def _check_username(username: str) -> None:
        if not username or ":" in username or any(c in username for c in "\r\n\0"):
            raise ValueError(f"invalid username: {username!r}")

    def add(self, username: str, password: str, salt: Optional[bytes] = None) -> None:
        self._check_username(username)
        if username in self.entries:
            raise ValueError(f"user already exists: {username}")
        salt_hex = (salt if salt is not None else secrets.token_bytes(16)).hex()
        self.entries[username] = (salt_hex, _digest(salt_hex, password))

    def verify(self, username: str, password: str) -> bool:
        return verify_credentials(self, username, password)

    def __contains__(self, username: str) -> bool:
        return username in self.entries

    def to_json(self) -> dict:
        return {u: {"salt": s, "digest": d} for u, (s, d) in sorted(self.entries.items())}

    @classmethod
    def from_json(cls, doc: dict) -> "CredentialStore":
        store = cls()
        for username, entry in doc.items():
            cls._check_username(username)
            store.entries[username] = (entry["salt"], entry["digest"])
        return store

    @classmethod
    def load(cls, path) -> "CredentialStore":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))

    def save(self, path) -> None:
        _atomic_write(Path(path), (json.dumps(self.to_json(), indent=2) + "\n").encode("utf-8"))


def verify_credentials(store: CredentialStore, username: str, password: str) -> bool:
    salt_hex, digest = store.entries.get(username, (_DUMMY_SALT, _DUMMY_DIGEST))
    ok = hmac.compare_digest(_digest(salt_hex, password), digest)
    return ok and username in store.entries


# ---------------------------------------------------------------------------
# queue ids


class QueueIdGenerator:
    """Unique 11-digit uppercase hex ids; reproducible when seeded."""

    def __init__(self, seed: Optional[int] = None) -> None:
        self._rng = random.Random(seed) if seed is not None else secrets.SystemRandom()
        self._issued: set = set()
        self._lock = threading.Lock()

    def __call__(self) -> str:
        with self._lock:
            while True:
                qid = f"{self._rng.getrandbits(44):011X}"
                if qid not in self._issued:
                    self._issued.add(qid)
                    return qid


def next_queue_id(generator: QueueIdGenerator) -> str:
    return generator()


# ---------------------------------------------------------------------------
# spool


@dataclass(frozen=True)
class SpooledMessage:
    queue_id: str
    received_at: datetime
    reverse_path: str
    forward_paths: tuple
    authenticated_as: Optional[str]
    raw_data: str

    def metadata(self) -> dict:
        return {
            "queue_id": self.queue_id,
            "received_at": self.received_at.astimezone(timezone.utc).isoformat().replace("+00:00", "Z"),
            "reverse_path": self.reverse_path,
            "forward_paths": list(self.forward_paths),
            "authenticated_as": self.authenticated_as,
        }


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def spool(message: SpooledMessage, spool_dir) -> Path:
    """Write ``<id>.eml`` then ``<id>.json``; both are on disk when this returns."""
    spool_dir = Path(spool_dir)
    eml = spool_dir / f"{message.queue_id}.eml"
    meta = spool_dir / f"{message.queue_id}.json"
    try:
        _atomic_write(eml, message.raw_data.encode("utf-8", "surrogateescape"))
        _atomic_write(meta, (json.dumps(message.metadata(), indent=2) + "\n").encode("utf-8"))
    except OSError as e:
        raise SpoolIoError(f"cannot spool {message.queue_id} into {spool_dir}: {e}") from e
    return eml


def load_spooled(spool_dir) -> list[SpooledMessage]:
    out = []
    for meta in sorted(Path(spool_dir).glob("*.json")):
        doc = json.loads(meta.read_text(encoding="utf-8"))
        raw = meta.with_suffix(".eml").read_bytes().decode("utf-8", "surrogateescape")
        out.append(
            SpooledMessage(
                doc["queue_id"],
                datetime.fromisoformat(doc["received_at"].replace("Z", "+00:00")),
                doc["reverse_path"],
                tuple(doc["forward_paths"]),
                doc["authenticated_as"],
                raw,
            )
        )
    return out


# ---------------------------------------------------------------------------
# transport


class LineChannel(Protocol):
    """What a session needs from a connection: lines in, text out."""

    def now(self) -> float: ...

    def read_line(self, deadline: Optional[float] = None) -> Optional[str]:
        """Next line without its terminator, ``None`` at end of stream.

        Raises :class:`ReadTimeout` once ``now() >= deadline``.
        """

    def write(self, text: str) -> None: ...

    def close(self) -> None: ...


class SocketChannel:
    def __init__(self, sock: socket.socket) -> None:
        self.sock = sock
        self._reader = sock.makefile("rb")

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 10.0) -> "SocketChannel":
        return cls(socket.create_connection((host, port), timeout=timeout))

    def now(self) -> float:
        return time.monotonic()

    def read_line(self, deadline: Optional[float] = None) -> Optional[str]:
        if deadline is not None:
            remaining = deadline - self.now()
            if remaining <= 0:
                raise ReadTimeout()
            self.sock.settimeout(remaining)
        else:
            self.sock.settimeout(None)
        try:
            data = self._reader.readline(MAX_WIRE_LINE)
        except socket.timeout as e:
            raise ReadTimeout() from e
        except OSError:
            return None
        if not data:
            return None
        return strip_eol(data.decode("utf-8", "surrogateescape"))

    def write(self, text: str) -> None:
        self.sock.sendall(text.encode("utf-8", "surrogateescape"))

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._reader.close()
        self.sock.close()


# ---------------------------------------------------------------------------
# server


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class MailServer:
    """Binds the session automaton to connections and spools accepted mail.

    ``handle`` runs one connection over any :class:`LineChannel`, so the same
    code path serves real sockets and the in-memory test harness.
    """

    def __init__(
        self,
        policy: Policy,
        credentials: Optional[CredentialStore] = None,
        spool_dir=None,
        *,
        queue_ids: Optional[Callable[[], str]] = None,
        max_connections: int = 64,
        clock: Callable[[], datetime] = _utcnow,
    ) -> None:
        self.policy = policy
        self.credentials = credentials if credentials is not None else CredentialStore()
        self.spool_dir = Path(spool_dir) if spool_dir is not None else None
        self.queue_ids = queue_ids if queue_ids is not None else QueueIdGenerator()
        self.clock = clock
        self.messages: list[SpooledMessage] = []
        self._spool_lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_connections)
        self._tcp: Optional[socketserver.ThreadingTCPServer] = None
        self._thread: Optional[threading.Thread] = None

    # -- per connection -----------------------------------------------------

    def _deliver(self, action: EnqueueMessage) -> SpooledMessage:
        msg = SpooledMessage(
            action.queue_id,
            self.clock(),
            action.envelope.reverse_path,
            action.envelope.forward_paths,
            action.envelope.authenticated_as,
            action.raw_data,
        )
        with self._spool_lock:
            if self.spool_dir is not None:
                spool(msg, self.spool_dir)
            self.messages.append(msg)
        logger.info("queued %s from <%s>", msg.queue_id, msg.reverse_path)
        return msg

    def handle(self, channel: LineChannel) -> SessionState:
        policy = self.policy
        state: SessionState = Connected()
        try:
            # the deadline is fixed before each reply goes out, so a peer that
            # reads the reply and then idles is measured from a known instant
            deadline = channel.now() + policy.command_timeout
            channel.write(render_reply(greet(policy)))
            while True:
                try:
                    line = channel.read_line(deadline)
                except ReadTimeout:
                    channel.write(render_reply(TIMEOUT))
                    break
                if line is None:
                    break
                t = step(state, line, policy, self.credentials, self.queue_ids)
                deadline = channel.now() + policy.command_timeout
                if isinstance(t.action, EnqueueMessage):
                    try:
                        self._deliver(t.action)
                    except SpoolIoError:
                        logger.exception("spool failure, aborting connection")
                        channel.write(render_reply(SPOOL_ERROR))
                        break
                if t.reply is not None:
                    channel.write(render_reply(t.reply))
                state = t.next_state
                if isinstance(t.action, CloseConnection):
                    break
        except OSError as e:
            logger.info("connection dropped: %s", e)
        finally:
            channel.close()
        return state

    def handle_socket(self, sock: socket.socket) -> None:
        channel = SocketChannel(sock)
        if not self._slots.acquire(blocking=False):
            try:
                channel.write(render_reply(TOO_MANY_CONNECTIONS))
            except OSError:
                pass
            channel.close()
            return
        try:
            self.handle(channel)
        finally:
            self._slots.release()

    # -- listener -----------------------------------------------------------

    def _make_tcp_server(self, host: str, port: int) -> socketserver.ThreadingTCPServer:
        owner = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                owner.handle_socket(self.request)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

            def shutdown_request(self, request) -> None:
                # the channel already closed the socket
                pass

        try:
            return Server((host, port), Handler)
        except OSError as e:
            raise BindError(f"cannot bind {host}:{port}: {e}") from e

    def start(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """Listen in a background thread; returns the bound address."""
        self._tcp = self._make_tcp_server(host, port)
        self._thread = threading.Thread(
            target=self._tcp.serve_forever, kwargs={"poll_interval": 0.05}, name="smtp-listener", daemon=True
        )
        self._thread.start()
        return self._tcp.server_address[:2]

    def serve_forever(self, host: str, port: int) -> None:
        self._tcp = self._make_tcp_server(host, port)
        logger.info("listening on %s:%d (%s mode)", host, port, self.policy.mode.value)
        try:
            self._tcp.serve_forever()
        finally:
            self._tcp.server_close()

    def shutdown(self) -> None:
        if self._tcp is not None:
            self._tcp.shutdown()
            self._tcp.server_close()
        if self._thread is not None:
            self._thread.join()
        self._tcp = self._thread = None

    def __enter__(self) -> "MailServer":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve(policy: Policy, credentials: CredentialStore, spool_dir, bind_address=("127.0.0.1", 2525), **kwargs) -> None:
    """Run a mail server in the foreground until interrupted."""
    spool_dir = Path(spool_dir)
    if not spool_dir.is_dir():
        raise SpoolIoError(f"spool directory does not exist: {spool_dir}")
    server = MailServer(policy, credentials, spool_dir, **kwargs)
    try:
        server.serve_forever(*bind_address)
    except KeyboardInterrupt:
        logger.info("interrupted, shutting down")
