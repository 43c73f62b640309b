"""In-memory network harness for exercising the server without sockets.

A :class:`DuplexPipe` has two ends with the same line contract as
:class:`~smtpaudit.server.SocketChannel`. Deadlines are measured on an
injectable clock, so timeout behavior can be driven from a
:class:`VirtualClock` instead of real sleeps.
"""

from __future__ import annotations

import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .protocol import CRLF, Reply, parse_reply, parse_reply_line
from .server import CredentialStore, MailServer, QueueIdGenerator, ReadTimeout
from .session import Policy

# real-time guard against a harness deadlock; never reached by a healthy run
_WALL_LIMIT = 20.0


class HarnessError(RuntimeError):
    pass


class VirtualClock:
    def __init__(self, start: float = 0.0) -> None:
        self._now = start
        self._lock = threading.Lock()
        self._listeners: list = []

    def __call__(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._now += seconds
            listeners = list(self._listeners)
        for notify in listeners:
            notify()

    def subscribe(self, notify: Callable[[], None]) -> None:
        with self._lock:
            self._listeners.append(notify)


class _Direction:
    def __init__(self) -> None:
        self.buffer = bytearray()
        self.closed = False


class PipeEnd:
    def __init__(self, pipe: "DuplexPipe", inbound: _Direction, outbound: _Direction) -> None:
        self._pipe = pipe
        self._in = inbound
        self._out = outbound
        self.received = bytearray()  # everything ever read at this end

    def now(self) -> float:
        return self._pipe.clock()

    def read_line(self, deadline: Optional[float] = None) -> Optional[str]:
        cond = self._pipe.cond
        wall_end = time.monotonic() + _WALL_LIMIT
        with cond:
            while True:
                if deadline is not None and self.now() >= deadline:
                    raise ReadTimeout()
                nl = self._in.buffer.find(b"\n")
                if nl >= 0:
                    raw = bytes(self._in.buffer[: nl + 1])
                    del self._in.buffer[: nl + 1]
                    self.received += raw
                    text = raw.decode("utf-8", "surrogateescape")
                    return text[:-2] if text.endswith("\r\n") else text[:-1]
                if self._in.closed:
                    if self._in.buffer:
                        raw = bytes(self._in.buffer)
                        self._in.buffer.clear()
                        self.received += raw
                        return raw.decode("utf-8", "surrogateescape")
                    return None
                if self._pipe.virtual:
                    if time.monotonic() > wall_end:
                        raise HarnessError("pipe read stalled; peer never wrote or closed")
                    cond.wait(0.25)
                else:
                    remaining = None if deadline is None else deadline - self.now()
                    cond.wait(remaining)

    def write(self, text: str) -> None:
        with self._pipe.cond:
            if self._out.closed:
                raise BrokenPipeError("peer end is closed")
            self._out.buffer += text.encode("utf-8", "surrogateescape")
            self._pipe.cond.notify_all()

    def close(self) -> None:
        with self._pipe.cond:
            self._out.closed = True
            self._in.closed = True
            self._pipe.cond.notify_all()


class DuplexPipe:
    def __init__(self, clock: Optional[Callable[[], float]] = None) -> None:
        self.cond = threading.Condition()
        self.virtual = isinstance(clock, VirtualClock)
        self.clock = clock if clock is not None else time.monotonic
        if self.virtual:
            clock.subscribe(self._wake)
        a_to_b, b_to_a = _Direction(), _Direction()
        self.client = PipeEnd(self, b_to_a, a_to_b)
        self.server = PipeEnd(self, a_to_b, b_to_a)

    def _wake(self) -> None:
        with self.cond:
            self.cond.notify_all()


def read_reply(channel, deadline: Optional[float] = None) -> Optional[tuple[Reply, list[str]]]:
    """Read one complete (possibly multiline) reply; ``None`` on end of stream."""
    lines = []
    while True:
        line = channel.read_line(deadline)
        if line is None:
            return None if not lines else (parse_reply(lines), lines)
        lines.append(line)
        _, last, _ = parse_reply_line(line)
        if last:
            return parse_reply(lines), lines


# ---------------------------------------------------------------------------
# scripted clients


@dataclass(frozen=True)
class Send:
    line: str


@dataclass(frozen=True)
class ExpectCode:
    code: int


@dataclass(frozen=True)
class ExpectLine:
    pattern: str


ScriptStep = Union[Send, ExpectCode, ExpectLine]


class StepMismatch(AssertionError):
    def __init__(self, index: int, expected, got) -> None:
        super().__init__(f"script step {index}: expected {expected!r}, got {got!r}")
        self.index = index
        self.expected = expected
        self.got = got


@dataclass
class ScriptedClient:
    steps: list = field(default_factory=list)

    def send(self, *lines: str) -> "ScriptedClient":
        self.steps.extend(Send(ln) for ln in lines)
        return self

    def expect(self, code: int) -> "ScriptedClient":
        self.steps.append(ExpectCode(code))
        return self

    def expect_line(self, pattern: str) -> "ScriptedClient":
        self.steps.append(ExpectLine(pattern))
        return self

    def run(self, channel, transcript: list, replies: Optional[list] = None) -> list[Reply]:
        """Play the script over ``channel``; raises :class:`StepMismatch`.

        The greeting is read before the first step. Lines exchanged and
        replies received are appended to ``transcript`` and ``replies`` as
        they happen, so both are complete up to a mismatch.
        """
        replies = [] if replies is None else replies

        def next_reply(index, expected):
            got = read_reply(channel)
            if got is None:
                raise StepMismatch(index, expected, "connection closed")
            r, lines = got
            transcript.extend(("S", ln) for ln in lines)
            replies.append(r)
            return r, lines

        next_reply(-1, "greeting")
        for i, s in enumerate(self.steps):
            if isinstance(s, Send):
                transcript.append(("C", s.line))
                channel.write(s.line + CRLF)
            elif isinstance(s, ExpectCode):
                r, _ = next_reply(i, s.code)
                if r.code != s.code:
                    raise StepMismatch(i, s.code, r.code)
            else:
                r, lines = next_reply(i, s.pattern)
                if not any(re.search(s.pattern, ln) for ln in lines):
                    raise StepMismatch(i, s.pattern, lines)
        return replies


SPOOF_DEMO_MESSAGE = (
    "Date: Wed, 22 Jul 2009 13:56:45 +0300",
    'From: "Secretary" <secr@mail.gr>',
    'To: "Professors" <professor@mail.gr>',
    "Subject: Board of Examiners",
    "Reply-To: secr@mail.gr",
    "User-Agent: Webmail/0.2.0",
    "Content-Transfer-Encoding: 8bit",
    'Content-Type: text/plain; charset="UTF-8"',
    "You are invited to the Board of Examiners meeting",
    "scheduled for Thursday 16 September 2010 at 12.30",
    "p.m. at the department's council room.",
)


def spoof_demo_script() -> ScriptedClient:
    """The client side of the classic spoofed-secretary dialogue."""
    return (
        ScriptedClient()
        .send("EHLO www.test.com").expect(250)
        .send("MAIL FROM:<secr@mail.gr>").expect(250)
        .send("RCPT TO:<professor@mail.gr>").expect(250)
        .send("DATA").expect(354)
        .send(*SPOOF_DEMO_MESSAGE, ".").expect(250)
        .send("QUIT").expect(221)
    )


# ---------------------------------------------------------------------------
# loopback runs


@dataclass
class LoopbackResult:
    transcript: list
    replies: list
    server: MailServer
    server_bytes: bytes
    mismatch: Optional[StepMismatch] = None

    @property
    def passed(self) -> bool:
        return self.mismatch is None

    @property
    def codes(self) -> list[int]:
        return [r.code for r in self.replies]

    @property
    def messages(self):
        return self.server.messages


def _run_server(server: MailServer, end: PipeEnd) -> threading.Thread:
    t = threading.Thread(target=server.handle, args=(end,), name="loopback-server", daemon=True)
    t.start()
    return t


def loopback_session(
    policy: Policy,
    credentials: Optional[CredentialStore] = None,
    script: Optional[ScriptedClient] = None,
    *,
    seed: int = 0,
    spool_dir=None,
    server: Optional[MailServer] = None,
) -> LoopbackResult:
    """Run ``script`` against a fresh server over an in-memory pipe.

    Deterministic for a given seed: queue ids come from a seeded generator
    and the pipe runs on a virtual clock.
    """
    if server is None:
        server = MailServer(policy, credentials, spool_dir, queue_ids=QueueIdGenerator(seed))
    pipe = DuplexPipe(VirtualClock())
    worker = _run_server(server, pipe.server)
    transcript: list = []
    replies: list = []
    mismatch = None
    try:
        (script or ScriptedClient()).run(pipe.client, transcript, replies)
    except StepMismatch as e:
        mismatch = e
    finally:
        pipe.client.close()
        worker.join(_WALL_LIMIT)
    return LoopbackResult(transcript, replies, server, bytes(pipe.client.received), mismatch)


class LoopbackConnector:
    """Hands out in-memory connections to ``server``; a drop-in for TCP connect."""

    def __init__(self, server: MailServer) -> None:
        self.server = server
        self.workers: list = []

    def __call__(self, host: str = "", port: int = 0, timeout: float = 10.0) -> PipeEnd:
        pipe = DuplexPipe()
        self.workers.append(_run_server(self.server, pipe.server))
        return pipe.client

    def join(self) -> None:
        for t in self.workers:
            t.join(_WALL_LIMIT)
        self.workers.clear()


@dataclass
class DrillResult:
    lines: list
    closed: bool

    @property
    def codes(self) -> list[int]:
        return [int(ln[:3]) for ln in self.lines]


def timeout_drill(policy: Policy, idle_seconds: float) -> DrillResult:
    """Connect, idle for ``idle_seconds`` of virtual time, and see what happens.

    If the server is still there after the idle period a NOOP and QUIT are
    sent, so ``closed`` tells whether the server hung up by itself.
    """
    clock = VirtualClock()
    pipe = DuplexPipe(clock)
    server = MailServer(policy, queue_ids=QueueIdGenerator(0))
    worker = _run_server(server, pipe.server)
    end = pipe.client
    lines: list = []

    _, greeting = read_reply(end)
    lines += greeting
    clock.advance(idle_seconds)
    try:
        end.write("NOOP" + CRLF)
    except BrokenPipeError:
        pass
    got = read_reply(end)
    closed = True
    if got is not None:
        lines += got[1]
        if got[0].code == 421:
            closed = read_reply(end) is None
        else:
            closed = False
            end.write("QUIT" + CRLF)
            bye = read_reply(end)
            if bye is not None:
                lines += bye[1]
    end.close()
    worker.join(_WALL_LIMIT)
    return DrillResult(lines, closed)
