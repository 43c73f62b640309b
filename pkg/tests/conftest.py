import pytest

from smtpaudit.server import CredentialStore, MailServer, QueueIdGenerator
from smtpaudit.session import Mode, Policy

HOST = "smtp.mail.gr"


@pytest.fixture
def open_policy():
    return Policy(Mode.OPEN, server_hostname=HOST)


@pytest.fixture
def auth_policy():
    return Policy(Mode.AUTH_REQUIRED, server_hostname=HOST)


@pytest.fixture
def credentials():
    store = CredentialStore()
    store.add("secr", "s3cret", salt=bytes(range(16)))
    return store


@pytest.fixture
def tcp_server():
    """Factory for servers listening on an ephemeral localhost port."""
    started = []

    def start(policy, credentials=None, spool_dir=None, seed=0, **kwargs):
        server = MailServer(policy, credentials, spool_dir, queue_ids=QueueIdGenerator(seed), **kwargs)
        host, port = server.start("127.0.0.1", 0)
        started.append(server)
        return server, port

    yield start
    for server in started:
        server.shutdown()


@pytest.fixture
def closed_port():
    import socket

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


# -- acceptance summary ------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    prev = _criteria.get(number, (title, True))
    _criteria[number] = (title, prev[1] and passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria, key=lambda n: (int(n.rstrip("abcdefgh")), n)):
        title, passed = _criteria[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>3}  {title}")
