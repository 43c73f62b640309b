"""SMTP spoofing lab: a small MTA with an auth-required mode, a spoofing
probe, and the spam-cost and DREAD calculators that go with them."""

__version__ = "0.1.0"
