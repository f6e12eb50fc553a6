import pytest

from swsurrogate.robots import RobotsPolicy, product_token, robots_url

ROBOTS = b"""
# comment
User-agent: swsurrogate
Disallow: /private
Allow: /private/public

User-agent: otherbot
User-agent: thirdbot
Disallow: /

User-agent: *
Disallow: /*.pdf$
Disallow: /tmp/
Allow: /tmp/ok
"""


@pytest.fixture
def policy():
    return RobotsPolicy.parse(ROBOTS)


def test_product_token():
    assert product_token("swsurrogate/0.1 (+http://x)") == "swsurrogate"
    assert product_token("Mozilla/5.0") == "mozilla"


@pytest.mark.parametrize(
    "agent, path, allowed",
    [
        ("swsurrogate/0.1", "/private/x", False),
        ("swsurrogate/0.1", "/private/public/x", True),
        ("SWSurrogate", "/tmp/x", True),  # own group replaces '*'
        ("otherbot", "/anything", False),
        ("thirdbot/2", "/", False),
        ("somebot", "/doc.pdf", False),
        ("somebot", "/doc.pdf?x=1", True),
        ("somebot", "/tmp/x", False),
        ("somebot", "/tmp/ok", True),
        ("somebot", "/robots.txt", True),
    ],
)
def test_can_fetch(policy, agent, path, allowed):
    assert policy.can_fetch(agent, "http://h.de" + path) is allowed


def test_allow_wins_equal_length():
    p = RobotsPolicy.parse(b"User-agent: *\nDisallow: /page\nAllow: /page\n")
    assert p.can_fetch("x", "http://h/page")


def test_empty_disallow_allows_everything():
    assert RobotsPolicy.parse(b"User-agent: *\nDisallow:\n").can_fetch("x", "http://h/a")


def test_percent_encoding_equivalence():
    p = RobotsPolicy.parse(b"User-agent: *\nDisallow: /a%7Eb\n")
    assert not p.can_fetch("x", "http://h/a~b")


@pytest.mark.parametrize("status, allowed", [(200, True), (404, True), (401, True), (500, False), (503, False)])
def test_status_semantics(status, allowed):
    assert RobotsPolicy.from_status(status, b"").can_fetch("x", "http://h/a") is allowed


def test_robots_url():
    assert robots_url("https://h.de:8443/a/b?c") == "https://h.de:8443/robots.txt"
