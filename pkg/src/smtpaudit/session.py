"""Server-side SMTP automaton.

:func:`step` is a pure transition function. It maps the current state, one
client input and the server policy to the next state, the reply to send, and
an optional side effect for the transport layer to carry out. Nothing here
touches sockets, clocks or disks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Union

from .protocol import (
    AuthLogin,
    AuthPlain,
    Command,
    CommandSyntaxError,
    Data,
    Ehlo,
    Helo,
    InvalidBase64,
    LineTooLong,
    Mail,
    MalformedAddress,
    Noop,
    Quit,
    Rcpt,
    Reply,
    Rset,
    StartTls,
    Unknown,
    decode_base64,
    parse_command,
    reply,
    unstuff_line,
)

DEFAULT_EXTENSIONS = (
    "PIPELINING",
    "SIZE 8192000",
    "ETRN",
    "STARTTLS",
    "AUTH LOGIN PLAIN",
    "AUTH=LOGIN PLAIN",
    "ENHANCEDSTATUSCODES",
    "8BITMIME",
    "DSN",
)
USERNAME_PROMPT = "VXNlcm5hbWU6"  # "Username:"
PASSWORD_PROMPT = "UGFzc3dvcmQ6"  # "Password:"


class Mode(str, enum.Enum):
    OPEN = "open"
    AUTH_REQUIRED = "auth"


@dataclass(frozen=True)
class Policy:
    mode: Mode = Mode.OPEN
    server_hostname: str = "localhost"
    banner_tag: str = "M.T.A."
    advertised_extensions: tuple = DEFAULT_EXTENSIONS
    command_timeout: float = 30.0
    max_message_size: int = 8192000

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "advertised_extensions", tuple(self.advertised_extensions))
        if not self.server_hostname or any(c in self.server_hostname for c in " \r\n"):
            raise ValueError(f"invalid server hostname: {self.server_hostname!r}")
        if self.command_timeout <= 0:
            raise ValueError("command_timeout must be positive")
        if self.max_message_size <= 0:
            raise ValueError("max_message_size must be positive")
        if self.mode is Mode.AUTH_REQUIRED and "AUTH LOGIN PLAIN" not in self.advertised_extensions:
            raise ValueError("auth-required mode must advertise AUTH LOGIN PLAIN")
        for ext in self.advertised_extensions:
            keyword, _, value = ext.partition(" ")
            if keyword.upper() == "SIZE" and value and int(value) != self.max_message_size:
                raise ValueError(
                    f"advertised SIZE {value} differs from max_message_size {self.max_message_size}"
                )

    @classmethod
    def with_size(cls, max_message_size: int, **kwargs) -> "Policy":
        """Build a policy whose advertised SIZE tracks ``max_message_size``."""
        exts = tuple(
            f"SIZE {max_message_size}" if e.upper().startswith("SIZE") else e
            for e in kwargs.pop("advertised_extensions", DEFAULT_EXTENSIONS)
        )
        return cls(advertised_extensions=exts, max_message_size=max_message_size, **kwargs)


class CredentialVerifier(Protocol):
    def verify(self, username: str, password: str) -> bool: ...


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class Connected:
    pass


@dataclass(frozen=True)
class Greeted:
    client_name: str


@dataclass(frozen=True)
class AuthAwaitingUsername:
    client_name: str


@dataclass(frozen=True)
class AuthAwaitingPassword:
    client_name: str
    username: str


@dataclass(frozen=True)
class AuthAwaitingPlainBlob:
    client_name: str


@dataclass(frozen=True)
class Authenticated:
    client_name: str
    username: str


@dataclass(frozen=True)
class EnvelopeOpen:
    client_name: str
    authenticated: Optional[str]
    reverse_path: str
    forward_paths: tuple = ()


@dataclass(frozen=True)
class ReceivingData:
    client_name: str
    authenticated: Optional[str]
    reverse_path: str
    forward_paths: tuple
    # received lines as a cons list (previous, line): O(1) append without mutation
    buffered: Optional[tuple] = None
    size: int = 0

    def lines(self) -> list[str]:
        out = []
        node = self.buffered
        while node is not None:
            node, line = node
            out.append(line)
        out.reverse()
        return out


@dataclass(frozen=True)
class Closed:
    pass


SessionState = Union[
    Connected,
    Greeted,
    AuthAwaitingUsername,
    AuthAwaitingPassword,
    AuthAwaitingPlainBlob,
    Authenticated,
    EnvelopeOpen,
    ReceivingData,
    Closed,
]

RAW_INPUT_STATES = (AuthAwaitingUsername, AuthAwaitingPassword, AuthAwaitingPlainBlob, ReceivingData)


def expects_raw_line(state: SessionState) -> bool:
    return isinstance(state, RAW_INPUT_STATES)


# ---------------------------------------------------------------------------
# transitions


@dataclass(frozen=True)
class Envelope:
    reverse_path: str
    forward_paths: tuple
    authenticated_as: Optional[str] = None


@dataclass(frozen=True)
class EnqueueMessage:
    queue_id: str
    envelope: Envelope
    raw_data: str


@dataclass(frozen=True)
class CloseConnection:
    pass


Action = Union[None, EnqueueMessage, CloseConnection]


@dataclass(frozen=True)
class Transition:
    next_state: SessionState
    reply: Optional[Reply]
    action: Action = None

    def __post_init__(self) -> None:
        if isinstance(self.action, EnqueueMessage):
            assert self.reply.code == 250 and self.reply.enhanced_status == "2.0.0"


OK = reply(250, "2.0.0", "Ok")
ADDRESS_OK = reply(250, "2.1.5", "Ok")
BYE = reply(221, "2.0.0", "Bye")
BAD_SEQUENCE = reply(503, "5.5.1", "Bad sequence of commands")
NOT_RECOGNIZED = reply(500, "5.5.2", "Command not recognized")
NOT_IMPLEMENTED = reply(502, "5.5.1", "Command not implemented")
LINE_TOO_LONG = reply(500, "5.5.2", "Line too long")
SYNTAX_ERROR = reply(501, "5.5.4", "Syntax error in parameters or arguments")
BAD_ADDRESS = reply(501, "5.1.3", "Bad address syntax")
TLS_UNAVAILABLE = reply(454, "4.7.0", "TLS not available")
DATA_PROMPT = reply(354, None, "End data with <CR><LF>.<CR><LF>")
AUTH_OK = reply(235, "2.7.0", "Authentication successful")
AUTH_FAILED = reply(535, "5.7.8", "Authentication failed")
TOO_BIG = reply(552, "5.3.4", "Message size exceeds limit")
TIMEOUT = reply(421, "4.4.2", "Timeout")


def not_logged_in(reverse_path: str) -> Reply:
    return reply(553, "5.7.1", f"{reverse_path}: Sender address rejected: not logged in")


def queued(queue_id: str) -> Reply:
    return reply(250, "2.0.0", f"Ok: queued as {queue_id}")


def greet(policy: Policy) -> Reply:
    return reply(220, None, f"{policy.server_hostname} {policy.banner_tag}")


def ehlo_reply(policy: Policy) -> Reply:
    return Reply(250, None, (policy.server_hostname, *policy.advertised_extensions))


def _idle(state: SessionState) -> SessionState:
    """The state to fall back to once an envelope is finished or dropped."""
    auth = getattr(state, "authenticated", None) or getattr(state, "username", None)
    if isinstance(state, Connected):
        return state
    if auth and isinstance(state, (Authenticated, EnvelopeOpen, ReceivingData)):
        return Authenticated(state.client_name, auth)
    return Greeted(state.client_name)


def _decode_text(blob: str) -> Optional[str]:
    try:
        return decode_base64(blob).decode("utf-8")
    except (InvalidBase64, UnicodeDecodeError):
        return None


def _check_plain(blob: str, state, credentials: CredentialVerifier) -> Transition:
    # authzid NUL authcid NUL passwd
    decoded = _decode_text(blob)
    parts = decoded.split("\0") if decoded is not None else []
    if len(parts) == 3 and parts[1] and credentials.verify(parts[1], parts[2]):
        return Transition(Authenticated(state.client_name, parts[1]), AUTH_OK)
    return Transition(Greeted(state.client_name), AUTH_FAILED)


def _raw_step(state, line: str, policy: Policy, credentials, next_queue_id) -> Transition:
    if isinstance(state, ReceivingData):
        if line == ".":
            back = _idle(state)
            if state.size > policy.max_message_size:
                return Transition(back, TOO_BIG)
            queue_id = next_queue_id()
            raw = "".join(ln + "\r\n" for ln in state.lines())
            env = Envelope(state.reverse_path, state.forward_paths, state.authenticated)
            return Transition(back, queued(queue_id), EnqueueMessage(queue_id, env, raw))
        line = unstuff_line(line)
        size = state.size + len(line.encode("utf-8", "surrogateescape")) + 2
        # past the limit only the running size is kept
        buffered = (state.buffered, line) if size <= policy.max_message_size else None
        return Transition(
            ReceivingData(
                state.client_name,
                state.authenticated,
                state.reverse_path,
                state.forward_paths,
                buffered,
                size,
            ),
            None,
        )

    if line.strip() == "*":
        return Transition(Greeted(state.client_name), AUTH_FAILED)
    if isinstance(state, AuthAwaitingUsername):
        username = _decode_text(line.strip())
        if not username:
            return Transition(Greeted(state.client_name), AUTH_FAILED)
        return Transition(
            AuthAwaitingPassword(state.client_name, username), reply(334, None, PASSWORD_PROMPT)
        )
    if isinstance(state, AuthAwaitingPassword):
        password = _decode_text(line.strip())
        if password is not None and credentials.verify(state.username, password):
            return Transition(Authenticated(state.client_name, state.username), AUTH_OK)
        return Transition(Greeted(state.client_name), AUTH_FAILED)
    if isinstance(state, AuthAwaitingPlainBlob):
        return _check_plain(line.strip(), state, credentials)
    raise TypeError(f"state {state!r} does not take raw lines")


def _command_step(state, cmd: Command, policy: Policy, credentials) -> Transition:
    if isinstance(cmd, Quit):
        return Transition(Closed(), BYE, CloseConnection())
    if isinstance(cmd, Noop):
        return Transition(state, OK)
    if isinstance(cmd, Rset):
        return Transition(_idle(state), OK)
    if isinstance(cmd, StartTls):
        return Transition(state, TLS_UNAVAILABLE)
    if isinstance(cmd, Unknown):
        return Transition(state, NOT_IMPLEMENTED if cmd.verb == "ETRN" else NOT_RECOGNIZED)
    if isinstance(cmd, (Helo, Ehlo)):
        answer = ehlo_reply(policy) if isinstance(cmd, Ehlo) else reply(250, None, policy.server_hostname)
        user = getattr(state, "authenticated", None) or getattr(state, "username", None)
        if user and isinstance(state, (Authenticated, EnvelopeOpen)):
            return Transition(Authenticated(cmd.host, user), answer)
        return Transition(Greeted(cmd.host), answer)

    if isinstance(state, Connected):
        return Transition(state, BAD_SEQUENCE)

    if isinstance(cmd, (AuthLogin, AuthPlain)):
        if not isinstance(state, Greeted):
            return Transition(state, BAD_SEQUENCE)
        if isinstance(cmd, AuthLogin):
            return Transition(AuthAwaitingUsername(state.client_name), reply(334, None, USERNAME_PROMPT))
        if cmd.blob is None:
            return Transition(AuthAwaitingPlainBlob(state.client_name), reply(334, None, ""))
        return _check_plain(cmd.blob, state, credentials)

    if isinstance(cmd, Mail):
        if isinstance(state, Authenticated):
            return Transition(EnvelopeOpen(state.client_name, state.username, cmd.reverse_path), ADDRESS_OK)
        if isinstance(state, Greeted):
            if policy.mode is Mode.AUTH_REQUIRED:
                return Transition(state, not_logged_in(cmd.reverse_path))
            return Transition(EnvelopeOpen(state.client_name, None, cmd.reverse_path), ADDRESS_OK)
        return Transition(state, BAD_SEQUENCE)

    if isinstance(cmd, Rcpt):
        if isinstance(state, EnvelopeOpen):
            return Transition(
                EnvelopeOpen(
                    state.client_name,
                    state.authenticated,
                    state.reverse_path,
                    state.forward_paths + (cmd.forward_path,),
                ),
                ADDRESS_OK,
            )
        return Transition(state, BAD_SEQUENCE)

    if isinstance(cmd, Data):
        if isinstance(state, EnvelopeOpen) and state.forward_paths:
            return Transition(
                ReceivingData(state.client_name, state.authenticated, state.reverse_path, state.forward_paths),
                DATA_PROMPT,
            )
        return Transition(state, BAD_SEQUENCE)

    return Transition(state, NOT_RECOGNIZED)


def _no_queue_id() -> str:
    raise RuntimeError("step needs a next_queue_id source to accept a message")


def step(
    state: SessionState,
    item: Union[Command, str],
    policy: Policy,
    credentials: CredentialVerifier,
    next_queue_id: Callable[[], str] = _no_queue_id,
) -> Transition:
    """Advance the session by one client input.

    ``item`` is a parsed :class:`Command`, or the raw line as received. Raw
    lines are required while authenticating or inside DATA; elsewhere they
    are parsed here and syntax errors become 5xx replies. The returned
    reply is ``None`` only for message lines inside DATA, which get no
    answer until the terminating dot.
    """
    if isinstance(state, Closed):
        return Transition(state, BAD_SEQUENCE)

    if expects_raw_line(state):
        if not isinstance(item, str):
            item = item.serialize()
        return _raw_step(state, item, policy, credentials, next_queue_id)

    if isinstance(item, str):
        try:
            item = parse_command(item)
        except LineTooLong:
            return Transition(state, LINE_TOO_LONG)
        except MalformedAddress:
            return Transition(state, BAD_ADDRESS)
        except CommandSyntaxError:
            return Transition(state, SYNTAX_ERROR)
    return _command_step(state, item, policy, credentials)


@dataclass
class Replay:
    replies: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    final_state: SessionState = Connected()


def replay_transcript(
    commands,
    policy: Policy,
    credentials: CredentialVerifier,
    next_queue_id: Callable[[], str] = _no_queue_id,
) -> list[Reply]:
    """Fold :func:`step` over ``commands`` starting from a fresh connection.

    The greeting is the first reply. Message lines inside DATA produce no
    reply and so add nothing to the output.
    """
    return run_transcript(commands, policy, credentials, next_queue_id).replies


def run_transcript(commands, policy, credentials, next_queue_id=_no_queue_id) -> Replay:
    out = Replay(replies=[greet(policy)])
    state: SessionState = Connected()
    for item in commands:
        t = step(state, item, policy, credentials, next_queue_id)
        state = t.next_state
        if t.reply is not None:
            out.replies.append(t.reply)
        if t.action is not None:
            out.actions.append(t.action)
    out.final_state = state
    return out
