"""Session-level reporting: after a run that touched the acceptance
suite, print one verdict line per criterion so the outcome is readable
without scrolling through the full pytest output."""

from __future__ import annotations

import re
import sys

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts: dict[int, str] = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match:
                number = int(match.group(1))
                verdict = "PASS" if outcome == "passed" else "FAIL"
                # a test both set up and failed keeps the failure
                if verdicts.get(number) != "FAIL":
                    verdicts[number] = verdict
    if not verdicts:
        return
    module = sys.modules.get("test_acceptance")
    labels = getattr(module, "CRITERIA", {}) if module else {}
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(verdicts):
        label = labels.get(number, "")
        terminalreporter.write_line(f"criterion {number:2d}: {verdicts[number]}  {label}")
