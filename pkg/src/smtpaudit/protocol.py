"""SMTP wire codec: commands, replies, Base64 credentials and dot transparency."""

from __future__ import annotations

import base64
import binascii
import re
from dataclasses import dataclass, field
from typing import Optional, Union

MAX_LINE_LENGTH = 1000
CRLF = "\r\n"

_r_eol = re.compile(r"[\r\n]")
_r_path = re.compile(r"^(FROM|TO)\s*:\s*<([^<>\s]*)>(?:\s+(.*))?$", re.I)
_r_reply_line = re.compile(r"^([2-5][0-9]{2})([ -])(.*)$", re.S)
_r_enhanced = re.compile(r"^([245]\.[0-9]{1,3}\.[0-9]{1,3})(?: (.*))?$", re.S)
_r_leading_dot = re.compile(r"^\.", re.M)


class ProtocolError(ValueError):
    pass


class CommandSyntaxError(ProtocolError):
    pass


class MalformedAddress(CommandSyntaxError):
    pass


class LineTooLong(CommandSyntaxError):
    pass


class MalformedReply(ProtocolError):
    pass


class InvalidBase64(ProtocolError):
    pass


def strip_eol(line: str) -> str:
    """Drop one trailing CRLF or bare LF (Telnet clients send either)."""
    if line.endswith("\r\n"):
        return line[:-2]
    if line.endswith("\n"):
        return line[:-1]
    return line


def _check_field(value: str, what: str) -> str:
    if _r_eol.search(value):
        raise CommandSyntaxError(f"{what} contains a line break: {value!r}")
    return value


def _check_address(addr: str) -> str:
    if not addr or addr.count("@") != 1 or _r_eol.search(addr):
        raise MalformedAddress(f"not a mailbox address: {addr!r}")
    return addr


# ---------------------------------------------------------------------------
# commands


@dataclass(frozen=True)
class Helo:
    host: str

    def __post_init__(self) -> None:
        _check_field(self.host, "host")

    def serialize(self) -> str:
        return f"HELO {self.host}"


@dataclass(frozen=True)
class Ehlo:
    host: str

    def __post_init__(self) -> None:
        _check_field(self.host, "host")

    def serialize(self) -> str:
        return f"EHLO {self.host}"


@dataclass(frozen=True)
class AuthLogin:
    def serialize(self) -> str:
        return "AUTH LOGIN"


@dataclass(frozen=True)
class AuthPlain:
    blob: Optional[str] = None

    def __post_init__(self) -> None:
        if self.blob is not None:
            _check_field(self.blob, "blob")

    def serialize(self) -> str:
        return "AUTH PLAIN" if self.blob is None else f"AUTH PLAIN {self.blob}"


@dataclass(frozen=True)
class Mail:
    reverse_path: str

    def __post_init__(self) -> None:
        _check_address(self.reverse_path)

    def serialize(self) -> str:
        return f"MAIL FROM:<{self.reverse_path}>"


@dataclass(frozen=True)
class Rcpt:
    forward_path: str

    def __post_init__(self) -> None:
        _check_address(self.forward_path)

    def serialize(self) -> str:
        return f"RCPT TO:<{self.forward_path}>"


@dataclass(frozen=True)
class Data:
    def serialize(self) -> str:
        return "DATA"


@dataclass(frozen=True)
class Quit:
    def serialize(self) -> str:
        return "QUIT"


@dataclass(frozen=True)
class Rset:
    def serialize(self) -> str:
        return "RSET"


@dataclass(frozen=True)
class Noop:
    def serialize(self) -> str:
        return "NOOP"


@dataclass(frozen=True)
class StartTls:
    def serialize(self) -> str:
        return "STARTTLS"


@dataclass(frozen=True)
class Unknown:
    verb: str
    # kept so the original line can be reproduced; not interpreted
    argument: str = ""

    def __post_init__(self) -> None:
        _check_field(self.verb, "verb")
        _check_field(self.argument, "argument")

    def serialize(self) -> str:
        return f"{self.verb} {self.argument}" if self.argument else self.verb


Command = Union[
    Helo, Ehlo, AuthLogin, AuthPlain, Mail, Rcpt, Data, Quit, Rset, Noop, StartTls, Unknown
]

_BARE_VERBS = {"DATA": Data, "QUIT": Quit, "RSET": Rset, "NOOP": Noop, "STARTTLS": StartTls}


def parse_command(line: str) -> Command:
    """Parse one client command line (CRLF already removed or tolerated).

    Unrecognized verbs come back as :class:`Unknown`; the session decides
    how to answer them.
    """
    line = strip_eol(line)
    if len(line) > MAX_LINE_LENGTH:
        raise LineTooLong(f"command line of {len(line)} characters exceeds {MAX_LINE_LENGTH}")
    _check_field(line, "command line")
    verb, _, rest = line.strip().partition(" ")
    upper = verb.upper()
    rest = rest.strip()

    if upper in ("HELO", "EHLO"):
        if not rest:
            raise CommandSyntaxError(f"{upper} requires a domain or address literal")
        return Helo(rest) if upper == "HELO" else Ehlo(rest)
    if upper == "MAIL" or upper == "RCPT":
        m = _r_path.match(rest)
        want = "FROM" if upper == "MAIL" else "TO"
        if not m or m.group(1).upper() != want:
            raise MalformedAddress(f"{upper} needs {want}:<address>, got {rest!r}")
        # ESMTP parameters after the path (SIZE=, BODY=) are accepted and ignored
        addr = m.group(2)
        return Mail(_check_address(addr)) if upper == "MAIL" else Rcpt(_check_address(addr))
    if upper == "AUTH":
        mechanism, _, initial = rest.partition(" ")
        mechanism = mechanism.upper()
        if mechanism == "LOGIN" and not initial:
            return AuthLogin()
        if mechanism == "PLAIN":
            return AuthPlain(initial.strip() or None)
        return Unknown(upper, rest)
    if upper in _BARE_VERBS and not rest:
        return _BARE_VERBS[upper]()
    return Unknown(upper, rest)


def serialize_command(command: Command) -> str:
    return command.serialize()


# ---------------------------------------------------------------------------
# replies


@dataclass(frozen=True)
class Reply:
    code: int
    enhanced_status: Optional[str] = None
    lines: tuple = field(default=("",))

    def __post_init__(self) -> None:
        if not isinstance(self.code, int) or not 200 <= self.code <= 599:
            raise ValueError(f"reply code out of range: {self.code!r}")
        lines = tuple(self.lines)
        if not lines:
            raise ValueError("a reply needs at least one line")
        for text in lines:
            if _r_eol.search(text):
                raise ValueError(f"reply text contains a line break: {text!r}")
        if self.enhanced_status is not None and not _r_enhanced.match(self.enhanced_status):
            raise ValueError(f"bad enhanced status code: {self.enhanced_status!r}")
        object.__setattr__(self, "lines", lines)

    @property
    def text(self) -> str:
        return " ".join(self.lines)

    def is_positive(self) -> bool:
        return self.code < 400

    def __str__(self) -> str:
        return render_reply(self).rstrip(CRLF)


def reply(code: int, enhanced: Optional[str], *lines: str) -> Reply:
    return Reply(code, enhanced, lines)


def render_reply_lines(r: Reply) -> list[str]:
    """Wire lines without terminators; hyphen continuation on all but the last."""
    out = []
    last = len(r.lines) - 1
    for i, text in enumerate(r.lines):
        sep = " " if i == last else "-"
        body = f"{r.enhanced_status} {text}" if r.enhanced_status else text
        out.append(f"{r.code}{sep}{body}")
    return out


def render_reply(r: Reply) -> str:
    return "".join(line + CRLF for line in render_reply_lines(r))


def parse_reply_line(line: str) -> tuple[int, bool, str]:
    """Split one reply line into (code, is_last, text)."""
    line = strip_eol(line)
    m = _r_reply_line.match(line)
    if not m:
        # "250" alone is legal and means an empty text
        if re.fullmatch(r"[2-5][0-9]{2}", line):
            return int(line), True, ""
        raise MalformedReply(f"not an SMTP reply line: {line!r}")
    return int(m.group(1)), m.group(2) == " ", m.group(3)


def parse_reply(lines: Union[str, list[str]]) -> Reply:
    if isinstance(lines, str):
        lines = [ln for ln in re.split(r"\r?\n", lines)]
        if lines and lines[-1] == "":
            lines.pop()
    if not lines:
        raise MalformedReply("empty reply")

    code = None
    texts = []
    for i, raw in enumerate(lines):
        c, last, text = parse_reply_line(raw)
        if code is None:
            code = c
        elif c != code:
            raise MalformedReply(f"code mismatch in continuation: {code} then {c}")
        if last != (i == len(lines) - 1):
            raise MalformedReply(f"continuation marker misplaced at line {i}")
        texts.append(text)

    # the enhanced status is factored out only when every line carries the same one
    enhanced = None
    first = _r_enhanced.match(texts[0])
    if first and first.group(1)[0] == str(code)[0]:
        candidate = first.group(1)
        stripped = []
        for text in texts:
            m = _r_enhanced.match(text)
            if not m or m.group(1) != candidate:
                break
            stripped.append(m.group(2) or "")
        else:
            # "2.0.0" alone would not survive a round trip ("250 2.0.0 " != "250 2.0.0")
            if all(f"{candidate} {s}" == t for s, t in zip(stripped, texts)):
                enhanced, texts = candidate, stripped
    return Reply(code, enhanced, tuple(texts))


# ---------------------------------------------------------------------------
# base64


def encode_base64(data: Union[bytes, str]) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return base64.b64encode(data).decode("ascii")


def decode_base64(text: str) -> bytes:
    text = text.strip()
    if len(text) % 4:
        raise InvalidBase64(f"length {len(text)} is not a multiple of 4")
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as e:
        raise InvalidBase64(str(e)) from e


# ---------------------------------------------------------------------------
# dot transparency and messages


def dot_stuff(body: str) -> str:
    """Double the leading dot of every line; the terminator is not added here."""
    return _r_leading_dot.sub("..", body)


def dot_unstuff(wire: str) -> str:
    return _r_leading_dot.sub("", wire)


def unstuff_line(line: str) -> str:
    return line[1:] if line.startswith(".") else line


def split_lines(text: str) -> list[str]:
    """Split on CRLF or bare LF. A trailing terminator does not open a new line."""
    if not text:
        return []
    parts = re.split(r"\r?\n", text)
    if parts[-1] == "":
        parts.pop()
    return parts


@dataclass
class MailMessage:
    headers: list = field(default_factory=list)
    body: str = ""

    def header(self, name: str) -> Optional[str]:
        for key, value in self.headers:
            if key.lower() == name.lower():
                return value
        return None

    def to_data(self) -> str:
        """Message text with CRLF endings: headers, blank line, body."""
        lines = [f"{name}: {value}" for name, value in self.headers]
        lines.append("")
        lines.extend(split_lines(self.body))
        return "".join(line + CRLF for line in lines)

    def data_lines(self) -> list[str]:
        """Lines as they go on the wire after DATA, dot-stuffed, without the terminator."""
        return split_lines(dot_stuff(self.to_data()))

    @classmethod
    def parse(cls, data: str) -> "MailMessage":
        """Split raw message text into headers and body.

        Headers end at the first blank line, or at the first line that is not
        a ``Name: value`` pair (hand-typed Telnet messages often omit the
        blank separator).
        """
        lines = split_lines(data)
        headers: list = []
        i = 0
        while i < len(lines):
            line = lines[i]
            if line == "":
                i += 1
                break
            if line[:1] in (" ", "\t") and headers:
                name, value = headers[-1]
                headers[-1] = (name, value + CRLF + line)
                i += 1
                continue
            name, sep, value = line.partition(":")
            if not sep or not name or " " in name:
                break
            headers.append((name, value.lstrip(" ")))
            i += 1
        body = "".join(line + CRLF for line in lines[i:])
        return cls(headers, body)
