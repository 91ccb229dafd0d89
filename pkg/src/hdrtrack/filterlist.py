"""Adblock-style network rule parsing and hostname labeling.

A hostname is a tracker when it matches at least one blocking rule. Rules
are evaluated against the minimal URL ``https://<host>/`` so that domain
anchors, separators and wildcards behave as they would for a request whose
only content is that host. Request-context options (``$third-party``,
``$domain=`` ...) are parsed and kept but never evaluated.
"""

from __future__ import annotations

import dataclasses
import enum
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .digest import sha256_bytes
from .errors import InvalidHostname
from .ingest import NON_TRACKER, TRACKER, Dataset

SEPARATOR_CLASS = r"(?:[^a-z0-9_\-.%]|$)"

# Options that restrict a rule to non-network contexts; such rules never
# block a generic request, so they are skipped at parse time.
INAPPLICABLE_OPTIONS = frozenset({
    "elemhide", "ehide", "generichide", "ghide", "genericblock", "content",
    "jsinject", "urlblock", "popup", "csp", "removeparam", "removeheader",
    "rewrite", "replace", "cookie", "redirect-rule", "specifichide", "shide",
    "permissions", "header", "stealth",
})

REGEX_BUDGET = 1024

_OPTION_RE = re.compile(r"^~?[a-z0-9_\-]+(=.*)?$", re.IGNORECASE)
_TOKEN_RE = re.compile(r"[a-z0-9]+")
_VALID_HOST_RE = re.compile(r"^(?:[a-z0-9_\-]+(?:\.[a-z0-9_\-]+)*|[0-9a-f:.]+)$")


class RuleKind(str, enum.Enum):
    HOSTNAME_ANCHOR = "hostname_anchor"
    PLAIN_SUBSTRING = "plain_substring"
    ANCHORED_START = "anchored_start"
    ANCHORED_END = "anchored_end"
    REGEX = "regex"


@dataclass(frozen=True)
class FilterRule:
    raw_text: str
    kind: RuleKind
    pattern: str
    pattern_tokens: tuple[str, ...]
    separator_positions: tuple[int, ...]
    is_exception: bool = False
    options: Mapping[str, str | None] = field(default_factory=dict)
    start_anchor: bool = False
    end_anchor: bool = False

    @property
    def regex(self) -> re.Pattern:
        return _compile(self)


_regex_cache: dict[tuple, re.Pattern] = {}


def _compile(rule: FilterRule) -> re.Pattern:
    key = (rule.kind, rule.pattern, rule.start_anchor, rule.end_anchor)
    rx = _regex_cache.get(key)
    if rx is None:
        rx = re.compile(_to_regex(rule), re.IGNORECASE)
        _regex_cache[key] = rx
    return rx


def _to_regex(rule: FilterRule) -> str:
    if rule.kind is RuleKind.REGEX:
        return rule.pattern
    body = []
    for ch in rule.pattern:
        if ch == "*":
            if not body or body[-1] != ".*":
                body.append(".*")
        elif ch == "^":
            body.append(SEPARATOR_CLASS)
        else:
            body.append(re.escape(ch))
    text = "".join(body)
    if rule.kind is RuleKind.HOSTNAME_ANCHOR:
        text = r"^[a-z][a-z0-9+.\-]*://(?:[^/?#]*\.)?" + text
    elif rule.start_anchor:
        text = "^" + text
    if rule.end_anchor:
        text += "$"
    return text


@dataclass
class ParseDiagnostics:
    skipped: Counter = field(default_factory=Counter)

    @property
    def total_skipped(self) -> int:
        return sum(self.skipped.values())


@dataclass
class FilterSet:
    rules: list[FilterRule]
    hostname_index: dict[str, list[int]]
    generic: list[int]
    source_digest: str
    diagnostics: ParseDiagnostics = field(default_factory=ParseDiagnostics)

    def __len__(self) -> int:
        return len(self.rules)


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    first_rule: int | None = None


def _split_options(line: str) -> tuple[str, dict]:
    idx = line.rfind("$")
    if idx < 0:
        return line, {}
    pattern, opt_text = line[:idx], line[idx + 1:]
    if pattern.startswith("/") and not pattern.endswith("/"):
        # the '$' belongs to a regex body
        return line, {}
    parts = opt_text.split(",")
    if not opt_text or not all(_OPTION_RE.match(p) for p in parts):
        return line, {}
    options = {}
    for p in parts:
        name, _, value = p.partition("=")
        options[name.lower()] = value if value else None
    return pattern, options


def _safe_tokens(pattern: str, start_bounded: bool, end_bounded: bool) -> list[str]:
    """Alphanumeric runs certain to appear as whole tokens in any matching URL."""
    out = []
    for m in _TOKEN_RE.finditer(pattern):
        s, e = m.span()
        left_ok = start_bounded if s == 0 else pattern[s - 1] != "*"
        right_ok = end_bounded if e == len(pattern) else pattern[e] != "*"
        if left_ok and right_ok:
            out.append(m.group())
    return out


def parse_rule(line: str) -> FilterRule | str:
    """Return a FilterRule, or the skip-reason string."""
    raw = line
    text = line.strip()
    if not text:
        return "empty"
    if text.startswith("!") or (text.startswith("[") and text.endswith("]")):
        return "comment"
    if "##" in text or "#@#" in text or "#?#" in text or "#$#" in text or "#%#" in text:
        return "cosmetic"
    is_exception = text.startswith("@@")
    if is_exception:
        text = text[2:]
    body, options = _split_options(text)
    if any(name.lstrip("~") in INAPPLICABLE_OPTIONS for name in options):
        return "inapplicable_option"
    if len(body) >= 2 and body.startswith("/") and body.endswith("/"):
        pattern = body[1:-1]
        if not pattern or len(pattern) > REGEX_BUDGET:
            return "regex_budget"
        try:
            re.compile(pattern, re.IGNORECASE)
        except re.error:
            return "bad_regex"
        return FilterRule(raw, RuleKind.REGEX, pattern, (), (), is_exception, options)

    body = body.lower()
    kind = RuleKind.PLAIN_SUBSTRING
    start_anchor = end_anchor = False
    if body.startswith("||"):
        kind = RuleKind.HOSTNAME_ANCHOR
        body = body[2:]
    elif body.startswith("|"):
        kind = RuleKind.ANCHORED_START
        start_anchor = True
        body = body[1:]
    if body.endswith("|"):
        end_anchor = True
        body = body[:-1]
        if kind is RuleKind.PLAIN_SUBSTRING:
            kind = RuleKind.ANCHORED_END
    if "|" in body:
        return "unparseable"
    if not body.strip("*"):
        # matches every URL; only meaningful through options we cannot evaluate
        return "match_all"
    if any(c.isspace() for c in body):
        return "unparseable"
    tokens = tuple(t for t in body.split("*") if t)
    seps = tuple(i for i, c in enumerate(body) if c == "^")
    return FilterRule(raw, kind, body, tokens, seps, is_exception, options,
                      start_anchor, end_anchor)


def _index_key(rule: FilterRule) -> str | None:
    if rule.kind is RuleKind.REGEX:
        return None
    start_bounded = rule.kind is RuleKind.HOSTNAME_ANCHOR or rule.start_anchor
    tokens = _safe_tokens(rule.pattern, start_bounded, rule.end_anchor)
    if not tokens:
        return None
    return max(tokens, key=len)


def build_filter_set(rules: list[FilterRule], source_digest: str = "",
                     diagnostics: ParseDiagnostics | None = None) -> FilterSet:
    index: dict[str, list[int]] = {}
    generic: list[int] = []
    for i, rule in enumerate(rules):
        key = _index_key(rule)
        if key is None:
            generic.append(i)
        else:
            index.setdefault(key, []).append(i)
    return FilterSet(rules, index, generic, source_digest, diagnostics or ParseDiagnostics())


def parse_filter_list(text: str | Iterable[str]) -> FilterSet:
    """Parse one or more concatenated lists. Order is preserved."""
    if not isinstance(text, str):
        text = "\n".join(text)
    diag = ParseDiagnostics()
    rules = []
    for line in text.splitlines():
        res = parse_rule(line)
        if isinstance(res, str):
            if res != "empty":
                diag.skipped[res] += 1
        else:
            rules.append(res)
    return build_filter_set(rules, sha256_bytes(text.encode("utf-8")), diag)


def check_hostname(h: str) -> str:
    if not isinstance(h, str) or not h or not _VALID_HOST_RE.match(h):
        raise InvalidHostname(f"not a bare lowercase hostname: {h!r}")
    return h


def synthetic_url(h: str) -> str:
    return f"https://[{h}]/" if ":" in h else f"https://{h}/"


def _candidates(h: str, fs: FilterSet) -> list[int]:
    url = synthetic_url(h)
    cands = list(fs.generic)
    seen = set()
    for tok in _TOKEN_RE.findall(url):
        if tok in seen:
            continue
        seen.add(tok)
        cands.extend(fs.hostname_index.get(tok, ()))
    cands.sort()
    return cands


def _first_match(url: str, rules: list[FilterRule], order: Iterable[int],
                 exceptions: bool) -> int | None:
    for i in order:
        rule = rules[i]
        if rule.is_exception is not exceptions:
            continue
        if _compile(rule).search(url):
            return i
    return None


def match_hostname(h: str, fs: FilterSet, honor_exceptions: bool = False,
                   use_index: bool = True) -> MatchResult:
    """Match a bare hostname; returns the lowest-index matching blocking rule.

    With ``honor_exceptions`` a matching ``@@`` rule forces a non-match.
    """
    check_hostname(h)
    url = synthetic_url(h)
    order = _candidates(h, fs) if use_index else range(len(fs.rules))
    if honor_exceptions:
        order = list(order)
        if _first_match(url, fs.rules, order, exceptions=True) is not None:
            return MatchResult(False, None)
    first = _first_match(url, fs.rules, order, exceptions=False)
    return MatchResult(first is not None, first)


def label_dataset(ds: Dataset, fs: FilterSet, honor_exceptions: bool = False,
                  force: bool = False) -> Dataset:
    """Label every record T iff its hostname matches the filter set."""
    if ds.label_map is not None and not force:
        raise ValueError("dataset is already labeled; pass force=True to relabel")
    cache: dict[str, str] = {}
    labels = {}
    for r in ds.records:
        lab = cache.get(r.remote_hostname)
        if lab is None:
            res = match_hostname(r.remote_hostname, fs, honor_exceptions)
            lab = TRACKER if res.matched else NON_TRACKER
            cache[r.remote_hostname] = lab
        labels[r.record_id] = lab
    prov = ds.provenance.with_extra(filter_digest=fs.source_digest,
                                    honor_exceptions=honor_exceptions,
                                    filter_rules=len(fs.rules))
    return dataclasses.replace(ds, provenance=prov, label_map=labels)
