"""Lightweight validity checks for generated candidates.

Each check inspects one aspect of a candidate text and either passes or
returns a human-readable reason. Checks that raise are reported as
CheckerCrash rather than silently counted as failures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .errors import CheckerCrash, EmptyInput


@dataclass(frozen=True)
class Check:
    """Named predicate; ``fn`` returns None on pass, a reason on fail."""

    name: str
    fn: Callable[[str], Optional[str]]


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    reasons: tuple[str, ...] = ()


def run_checks(candidate: str, checks: Sequence[Check]) -> CheckResult:
    """Run every check; the result fails if any check failed and carries
    one reason per failed check, in check order."""
    if not candidate:
        raise EmptyInput("empty candidate text")
    reasons = []
    for check in checks:
        try:
            verdict = check.fn(candidate)
        except Exception as exc:
            raise CheckerCrash(f"check {check.name!r} crashed: {exc}") from exc
        if verdict is not None:
            reasons.append(f"{check.name}: {verdict}")
    return CheckResult(passed=not reasons, reasons=tuple(reasons))


# ---- common check builders ----

def nonempty_check() -> Check:
    return Check("nonempty", lambda text: None if text.strip() else "candidate is blank")


def required_columns_check(columns: Sequence[str]) -> Check:
    """Treats the first line of the candidate as a CSV header and demands
    every required column, naming the missing ones."""
    required = list(columns)

    def fn(text: str) -> Optional[str]:
        header = text.splitlines()[0] if text.splitlines() else ""
        present = {c.strip() for c in header.split(",")}
        missing = [c for c in required if c not in present]
        if missing:
            return f"missing required columns: {', '.join(missing)}"
        return None

    return Check("required_columns", fn)


def python_syntax_check() -> Check:
    def fn(text: str) -> Optional[str]:
        try:
            compile(text, "<candidate>", "exec")
        except SyntaxError as exc:
            return f"syntax error at line {exc.lineno}: {exc.msg}"
        return None

    return Check("python_syntax", fn)
