"""Spoofing probe against SMTP servers and the report built from its results.

A probe greets the target, then asks it to accept an envelope sender it has
no business accepting without authentication. Whether the server takes the
``MAIL FROM`` decides the verdict. By default the probe backs out with RSET
before any message is sent.
"""

from __future__ import annotations

import enum
import json
import logging
import socket
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Optional

from .protocol import CRLF, MailMessage, ProtocolError, Reply, parse_reply, parse_reply_line
from .server import MailServer, QueueIdGenerator, ReadTimeout, SocketChannel
from .session import Mode, Policy
from .testkit import LoopbackConnector, read_reply

logger = logging.getLogger(__name__)

MASK_LETTERS = "xyzabcdefghijklmnopqrstuvw"
TEST_SUBJECT = "[smtpaudit] spoofing test, please ignore"


class Verdict(str, enum.Enum):
    VULNERABLE = "Vulnerable"
    SECURED = "Secured"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class ProbeSpec:
    host: str
    spoofed_from: str
    rcpt_to: str
    port: int = 25
    ehlo_name: str = "www.test.com"
    send_message: bool = False
    timeout: float = 10.0


@dataclass
class ProbeResult:
    host: str
    port: int
    verdict: Verdict
    transcript: list
    decisive_reply: Optional[Reply]
    probed_at: datetime

    @property
    def target(self) -> str:
        return f"{self.host}:{self.port}"

    def client_lines(self) -> list[str]:
        return [line for direction, line in self.transcript if direction == "C"]


def classify_code(code: Optional[int]) -> Verdict:
    if code is None:
        return Verdict.INDETERMINATE
    if 200 <= code < 300:
        return Verdict.VULNERABLE
    if 500 <= code < 600:
        return Verdict.SECURED
    # 4xx is transient (greylisting, load shedding): no evidence either way
    return Verdict.INDETERMINATE


def decisive_reply(transcript: Iterable[tuple]) -> Optional[Reply]:
    """The server's answer to the first ``MAIL FROM`` in ``transcript``."""
    pending: Optional[list] = None
    for direction, line in transcript:
        if pending is None:
            if direction == "C" and line.upper().startswith("MAIL FROM"):
                pending = []
            continue
        if direction == "C":
            return None
        if direction != "S":
            continue
        pending.append(line)
        try:
            if parse_reply_line(line)[1]:
                return parse_reply(pending)
        except ProtocolError:
            return None
    return None


def classify(transcript: Iterable[tuple]) -> Verdict:
    r = decisive_reply(list(transcript))
    return classify_code(r.code if r is not None else None)


def anonymize_host(fqdn: str) -> str:
    labels = fqdn.rstrip(".").split(".")
    masked = [labels[0]]
    for i in range(len(labels) - 1):
        letter = MASK_LETTERS[i % len(MASK_LETTERS)]
        masked.append(letter * (2 + i // len(MASK_LETTERS)))
    return ".".join(masked)


def _test_message(spec: ProbeSpec) -> MailMessage:
    return MailMessage(
        [
            ("From", f"<{spec.spoofed_from}>"),
            ("To", f"<{spec.rcpt_to}>"),
            ("Subject", TEST_SUBJECT),
            ("X-Smtpaudit-Test", "yes"),
        ],
        "This message was sent by an authorized SMTP spoofing audit.\r\n"
        "The sender address is forged on purpose. No action is required.\r\n",
    )


class _Conversation:
    def __init__(self, channel, timeout: float, transcript: list) -> None:
        self.channel = channel
        self.timeout = timeout
        self.transcript = transcript

    def read(self) -> Optional[Reply]:
        got = read_reply(self.channel, self.channel.now() + self.timeout)
        if got is None:
            self.transcript.append(("!", "connection closed by server"))
            return None
        reply, lines = got
        self.transcript.extend(("S", ln) for ln in lines)
        return reply

    def send(self, line: str) -> None:
        self.transcript.append(("C", line))
        self.channel.write(line + CRLF)

    def exchange(self, line: str) -> Optional[Reply]:
        self.send(line)
        return self.read()


def probe(spec: ProbeSpec, connect: Optional[Callable] = None) -> ProbeResult:
    """Run the spoofing dialogue against ``spec.host``.

    Never raises for network or protocol trouble: those end the probe with an
    Indeterminate verdict and a ``("!", reason)`` entry in the transcript.
    """
    connect = connect or SocketChannel.connect
    transcript: list = []
    probed_at = datetime.now(timezone.utc)

    def result() -> ProbeResult:
        decisive = decisive_reply(transcript)
        verdict = classify_code(decisive.code if decisive else None)
        return ProbeResult(spec.host, spec.port, verdict, transcript, decisive, probed_at)

    try:
        channel = connect(spec.host, spec.port, spec.timeout)
    except OSError as e:
        transcript.append(("!", f"connect failed: {e}"))
        return result()

    talk = _Conversation(channel, spec.timeout, transcript)
    try:
        greeting = talk.read()
        if greeting is None or greeting.code != 220:
            transcript.append(("!", "no 220 greeting"))
            return result()
        hello = talk.exchange(f"EHLO {spec.ehlo_name}")
        if hello is not None and hello.code >= 500:
            hello = talk.exchange(f"HELO {spec.ehlo_name}")
        if hello is None or hello.code != 250:
            transcript.append(("!", "server refused the greeting"))
            return result()

        mail = talk.exchange(f"MAIL FROM:<{spec.spoofed_from}>")
        if mail is not None and mail.code == 250:
            talk.exchange(f"RCPT TO:<{spec.rcpt_to}>")

        if spec.send_message and classify(transcript) is Verdict.VULNERABLE:
            prompt = talk.exchange("DATA")
            if prompt is not None and prompt.code == 354:
                for line in _test_message(spec).data_lines():
                    talk.send(line)
                talk.exchange(".")
        else:
            talk.exchange("RSET")
        talk.exchange("QUIT")
    except ReadTimeout:
        transcript.append(("!", f"no reply within {spec.timeout}s"))
    except ProtocolError as e:
        transcript.append(("!", f"unparseable reply: {e}"))
    except (OSError, socket.timeout) as e:
        transcript.append(("!", f"connection error: {e}"))
    finally:
        try:
            channel.close()
        except OSError:
            pass
    return result()


# ---------------------------------------------------------------------------
# reporting


@dataclass
class AuditRow:
    category: str
    masked_host: str
    vulnerable: str
    secured: str


@dataclass
class AuditReport:
    rows: list = field(default_factory=list)
    text: str = ""
    document: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.document, indent=2)


def _yes_no(result: ProbeResult) -> tuple[str, str]:
    if result.verdict is Verdict.VULNERABLE:
        return "Yes", "No"
    if result.verdict is Verdict.SECURED:
        return "No", "Yes"
    return "?", "?"


def _scrub(text: str, host: str, masked: str) -> str:
    return text.replace(host, masked) if host and host != masked else text


def render_report(results, anonymize: bool = True) -> AuditReport:
    """Group ``(category, ProbeResult)`` pairs into a table plus JSON document.

    The text table always shows masked hostnames. ``anonymize=False`` only
    keeps the raw hostnames (and unscrubbed transcripts) in the JSON.
    """
    groups: dict = {}
    for category, res in results:
        groups.setdefault(category, []).append(res)

    rows = []
    doc_rows = []
    for category, members in groups.items():
        for res in members:
            masked = anonymize_host(res.host)
            vulnerable, secured = _yes_no(res)
            rows.append(AuditRow(category, masked, vulnerable, secured))
            shown = masked if anonymize else res.host
            doc_rows.append(
                {
                    "category": category,
                    "host": shown,
                    "port": res.port,
                    "vulnerable": vulnerable,
                    "secured": secured,
                    "verdict": res.verdict.value,
                    "probed_at": res.probed_at.isoformat().replace("+00:00", "Z"),
                    "decisive_reply": str(res.decisive_reply) if res.decisive_reply else None,
                    "transcript": [
                        [d, _scrub(ln, res.host, masked) if anonymize else ln] for d, ln in res.transcript
                    ],
                }
            )

    headers = ("", "Mail servers", "Vulnerable", "Secured")
    table = []
    last_category = None
    for row in rows:
        label = row.category if row.category != last_category else ""
        last_category = row.category
        table.append((label, row.masked_host, row.vulnerable, row.secured))
    widths = [max(len(r[i]) for r in [headers, *table]) for i in range(4)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers).rstrip(), "  ".join("-" * w for w in widths)]
    lines += [fmt.format(*r).rstrip() for r in table]
    return AuditReport(rows, "\n".join(lines) + "\n", {"anonymized": anonymize, "rows": doc_rows})


def exit_code(results: Iterable[ProbeResult]) -> int:
    verdicts = {r.verdict for r in results}
    if Verdict.VULNERABLE in verdicts:
        return 1
    if Verdict.INDETERMINATE in verdicts:
        return 2
    return 0


def self_check() -> bool:
    """Probe in-memory open and auth-required servers; the verdicts must differ."""
    expected = {Mode.OPEN: Verdict.VULNERABLE, Mode.AUTH_REQUIRED: Verdict.SECURED}
    for mode, want in expected.items():
        server = MailServer(Policy(mode, server_hostname="selfcheck.invalid"), queue_ids=QueueIdGenerator(0))
        connect = LoopbackConnector(server)
        got = probe(ProbeSpec("selfcheck.invalid", "secr@mail.gr", "professor@mail.gr"), connect)
        connect.join()
        if got.verdict is not want or server.messages:
            logger.error("self-check failed in %s mode: %s", mode.value, got.verdict.value)
            return False
    return True
