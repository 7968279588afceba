"""Token-level rewrite rules: synonym swaps, filler insertion, prefix rewrites.

Rules operate on (tokens, spans) so gold slot annotations survive the
rewrite: spans after the edit site are shifted, and a rule that would
touch a slot span is simply inapplicable for that occurrence.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import SlotSpan


@dataclass(frozen=True)
class RewriteRule:
    name: str
    find: tuple[str, ...]                  # empty for pure insertion
    options: tuple[tuple[str, ...], ...]   # replacement / insertion phrases
    anchor: str = "any"                    # "any" | "start" | "end"

    def __post_init__(self):
        if self.anchor not in ("any", "start", "end"):
            raise ValueError(f"bad anchor {self.anchor!r}")
        if not self.find and self.anchor == "any":
            raise ValueError("insertion rules need anchor 'start' or 'end'")
        if not self.options:
            raise ValueError(f"rule {self.name!r} has no options")

    def to_json(self) -> dict:
        return {"name": self.name, "find": " ".join(self.find),
                "options": [" ".join(o) for o in self.options], "anchor": self.anchor}

    @classmethod
    def from_json(cls, obj: dict) -> "RewriteRule":
        return cls(obj["name"], tuple(obj.get("find", "").split()),
                   tuple(tuple(o.split()) for o in obj["options"]),
                   obj.get("anchor", "any"))


def _find_site(rule: RewriteRule, tokens, spans) -> int | None:
    """First matching position whose tokens lie outside every slot span."""
    n, m = len(tokens), len(rule.find)
    if m == 0:
        return 0 if rule.anchor == "start" else n
    positions = [0] if rule.anchor == "start" else range(n - m + 1)
    if rule.anchor == "end":
        positions = [n - m] if n >= m else []
    for pos in positions:
        if pos + m > n or tuple(tokens[pos:pos + m]) != rule.find:
            continue
        if any(s.start <= pos + m - 1 and pos <= s.end for s in spans):
            continue
        return pos
    return None


def apply_rule(rule: RewriteRule, tokens, spans, option_idx: int):
    """Rewrite one occurrence; returns (tokens, spans) or None if inapplicable."""
    site = _find_site(rule, tokens, spans)
    if site is None:
        return None
    replacement = rule.options[option_idx]
    removed = len(rule.find)
    delta = len(replacement) - removed
    new_tokens = list(tokens[:site]) + list(replacement) + list(tokens[site + removed:])
    new_spans = []
    for s in spans:
        if s.end < site:
            new_spans.append(s)
        elif s.start >= site + removed:
            new_spans.append(SlotSpan(s.start + delta, s.end + delta, s.label))
        else:
            return None  # span intersects the edit site
    return new_tokens, new_spans


def rule_variants(rules, tokens, spans=()):
    """All (rule, option_idx, tokens, spans) rewrites of a sentence."""
    out = []
    for rule in rules:
        for idx in range(len(rule.options)):
            result = apply_rule(rule, tokens, spans, idx)
            if result is not None:
                out.append((rule, idx, result[0], result[1]))
    return out
