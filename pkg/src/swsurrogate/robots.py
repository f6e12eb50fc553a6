"""robots.txt evaluation following RFC 9309.

Groups are selected by case-insensitive product-token match on the
user-agent line (falling back to ``*``); within the group the longest
matching rule wins and ``allow`` wins ties. ``*`` and ``$`` are supported.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from urllib.parse import quote, unquote, urlsplit

MAX_ROBOTS_BYTES = 500 * 1024


def product_token(user_agent: str) -> str:
    """``"MyBot/1.0 (+http://x)"`` -> ``"mybot"``."""
    token = re.match(r"[A-Za-z_\-]*", user_agent.strip())
    return token.group(0).lower() if token else ""


def _normalize_path(path: str) -> str:
    # percent-encode consistently so "/a%7Eb" and "/a~b" compare equal
    return quote(unquote(path), safe="/?=&;:@+$,*!'()%-._~")


@dataclass(frozen=True)
class Rule:
    allow: bool
    pattern: str

    def matches(self, path: str) -> bool:
        return _compile(self.pattern).match(path) is not None


_cache: dict[str, re.Pattern] = {}


def _compile(pattern: str) -> re.Pattern:
    compiled = _cache.get(pattern)
    if compiled is None:
        anchored = pattern.endswith("$")
        body = pattern[:-1] if anchored else pattern
        regex = ".*".join(re.escape(part) for part in _normalize_path(body).split("*"))
        compiled = re.compile(regex + ("$" if anchored else ""), re.DOTALL)
        _cache[pattern] = compiled
    return compiled


@dataclass
class RobotsPolicy:
    groups: dict[str, list[Rule]] = field(default_factory=dict)
    allow_all: bool = False
    disallow_all: bool = False

    @classmethod
    def allowing(cls) -> "RobotsPolicy":
        return cls(allow_all=True)

    @classmethod
    def denying(cls) -> "RobotsPolicy":
        return cls(disallow_all=True)

    @classmethod
    def from_status(cls, status: int, body: bytes) -> "RobotsPolicy":
        """Policy for a robots.txt fetch outcome.

        4xx means no restrictions; 5xx means the site is treated as fully
        disallowed until robots.txt becomes reachable.
        """
        if 200 <= status < 300:
            return cls.parse(body)
        if 400 <= status < 500:
            return cls.allowing()
        return cls.denying()

    @classmethod
    def parse(cls, body: bytes) -> "RobotsPolicy":
        text = body[:MAX_ROBOTS_BYTES].decode("utf-8", errors="replace")
        groups: dict[str, list[Rule]] = {}
        agents: list[str] = []
        in_rules = False
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            key, colon, value = line.partition(":")
            if not colon:
                continue
            key, value = key.strip().lower(), value.strip()
            if key == "user-agent":
                if in_rules:
                    agents, in_rules = [], False
                agent = value.lower() if value == "*" else product_token(value)
                agents.append(agent)
                groups.setdefault(agent, [])
            elif key in ("allow", "disallow"):
                if not agents:
                    continue
                in_rules = True
                if not value:
                    continue
                for agent in agents:
                    groups[agent].append(Rule(key == "allow", value))
        return cls(groups=groups)

    def rules_for(self, user_agent: str) -> list[Rule]:
        token = product_token(user_agent)
        if token and token in self.groups:
            return self.groups[token]
        return self.groups.get("*", [])

    def can_fetch(self, user_agent: str, url: str) -> bool:
        if self.allow_all:
            return True
        if self.disallow_all:
            return False
        parts = urlsplit(url)
        path = (parts.path or "/") + (f"?{parts.query}" if parts.query else "")
        if path == "/robots.txt":
            return True
        path = _normalize_path(path)
        best: Rule | None = None
        for rule in self.rules_for(user_agent):
            if not rule.matches(path):
                continue
            if best is None or len(rule.pattern) > len(best.pattern) or (
                len(rule.pattern) == len(best.pattern) and rule.allow
            ):
                best = rule
        return best is None or best.allow


def robots_url(url: str) -> str:
    parts = urlsplit(url)
    return f"{parts.scheme}://{parts.netloc}/robots.txt"
