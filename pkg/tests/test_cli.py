import io
import json
import subprocess
import sys

import pytest

from smtpaudit.cli import main
from smtpaudit.server import CredentialStore

COST = ["cost", "--employees", "680", "--workdays", "230", "--wage", "15", "--spam-per-day", "25",
        "--seconds-per-spam", "3"]
DREAD = ["dread", "--damage", "10", "--reproducibility", "10", "--exploitability", "7", "--affected", "10",
         "--discoverability", "10"]


def test_cost(capsys):
    assert main(COST) == 0
    out = capsys.readouterr().out
    assert "48,875.00" in out and "212.50" in out and "71.88" in out and "0.31" in out


def test_cost_eu_json(capsys):
    assert main(["--json", *COST, "--locale", "eu"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["outputs"]["annual_cost"]["display"] == "48.875,00"


def test_cost_invalid(capsys):
    assert main(["cost", "--employees", "0", "--workdays", "1", "--wage", "1", "--spam-per-day", "1",
                 "--seconds-per-spam", "1"]) == 2


def test_dread(capsys):
    assert main(DREAD) == 0
    assert capsys.readouterr().out.strip() == "9.4"
    assert main(["--json", *DREAD]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["risk"] == "9.4" and doc["risk_exact"] == "47/5"


def test_dread_out_of_range(capsys):
    argv = list(DREAD)
    argv[2] = "11"
    assert main(argv) == 2


def test_dread_rank_file(tmp_path, capsys):
    threats = [
        {"name": "weak", "categories": ["Tampering"],
         "score": dict(damage_potential=2, reproducibility=2, exploitability=2, affected_users=2, discoverability=2)},
        {"name": "spoofing via open MAIL FROM", "categories": ["Spoofing", "Information disclosure"],
         "score": dict(damage_potential=10, reproducibility=10, exploitability=7, affected_users=10,
                       discoverability=10)},
    ]
    path = tmp_path / "threats.json"
    path.write_text(json.dumps(threats))
    assert main(["--json", "dread", "--threats", str(path)]) == 0
    ranked = json.loads(capsys.readouterr().out)
    assert [t["name"] for t in ranked] == ["spoofing via open MAIL FROM", "weak"]
    assert ranked[0]["risk"] == "9.4"
    # output reads back as input
    path.write_text(json.dumps(ranked))
    assert main(["--json", "dread", "--threats", str(path)]) == 0
    assert json.loads(capsys.readouterr().out) == ranked


def test_dread_flag_conflicts(tmp_path, capsys):
    assert main(["dread", "--damage", "3"]) == 2
    assert main(["dread", "--threats", str(tmp_path / "x.json"), "--damage", "3"]) == 2


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["bogus"]) == 2
    assert main(["cost"]) == 2
    assert "usage" in capsys.readouterr().err


def test_adduser(tmp_path, monkeypatch, capsys):
    users = tmp_path / "users.json"
    monkeypatch.setattr(sys, "stdin", io.StringIO("s3cret\n"))
    assert main(["adduser", "--users", str(users), "--name", "secr", "--password-stdin"]) == 0
    assert CredentialStore.load(users).verify("secr", "s3cret")
    monkeypatch.setattr(sys, "stdin", io.StringIO("again\n"))
    assert main(["adduser", "--users", str(users), "--name", "secr", "--password-stdin"]) == 2


def test_adduser_has_no_password_argument(capsys):
    assert main(["adduser", "--users", "u.json", "--name", "x", "--password", "pw"]) == 2


class TestAudit:
    def args(self, port, *extra):
        return ["audit", "--host", "127.0.0.1", "--port", str(port), "--from", "secr@mail.gr",
                "--to", "professor@mail.gr", "--timeout", "3", *extra]

    def test_vulnerable(self, tcp_server, open_policy, tmp_path, capsys):
        _, port = tcp_server(open_policy)
        report = tmp_path / "report.json"
        assert main(self.args(port, "--json", str(report))) == 1
        out = capsys.readouterr().out
        assert "127.xx.yy.zz" in out and "Yes" in out
        doc = json.loads(report.read_text())
        assert doc["rows"][0]["verdict"] == "Vulnerable"
        assert doc["rows"][0]["host"] == "127.xx.yy.zz"

    def test_secured(self, tcp_server, auth_policy, capsys):
        _, port = tcp_server(auth_policy)
        assert main(["--json", *self.args(port)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["rows"][0]["verdict"] == "Secured"

    def test_indeterminate(self, closed_port, capsys):
        assert main(self.args(closed_port)) == 2

    def test_send_requires_acknowledgement(self, tcp_server, open_policy, capsys):
        server, port = tcp_server(open_policy)
        assert main(self.args(port, "--send")) == 2
        assert server.messages == []
        assert main(self.args(port, "--send", "--i-understand-this-sends-mail")) == 1
        assert len(server.messages) == 1


def test_serve_validation(tmp_path, capsys):
    assert main(["serve", "--mode", "auth", "--spool", str(tmp_path)]) == 2
    assert main(["serve", "--spool", str(tmp_path / "missing")]) == 2


def test_serve_subprocess(tmp_path, closed_port):
    """The installed entry point serves mail until terminated."""
    spool = tmp_path / "spool"
    spool.mkdir()
    proc = subprocess.Popen(
        [sys.executable, "-m", "smtpaudit", "--json", "serve", "--port", str(closed_port), "--spool", str(spool),
         "--hostname", "smtp.mail.gr"],
        stdout=subprocess.PIPE, text=True,
    )
    try:
        assert json.loads(proc.stdout.readline())["mode"] == "open"
        from smtpaudit.audit import ProbeSpec, Verdict, probe
        import time

        for _ in range(50):
            res = probe(ProbeSpec("127.0.0.1", "a@b.c", "d@e.f", port=closed_port, timeout=2))
            if res.verdict is not Verdict.INDETERMINATE:
                break
            time.sleep(0.1)
        assert res.verdict is Verdict.VULNERABLE
    finally:
        proc.terminate()
        proc.wait(10)
