"""Suite-level pytest wiring.

The tests in test_acceptance.py each certify one end-to-end contract.  This
hook prints a compact one-line verdict per acceptance check after the run,
so the full verdict list is visible without rerunning under -v.
"""

_PRECEDENCE = {"ERROR": 3, "FAIL": 2, "SKIP": 1, "PASS": 0}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = {}
    for status, label in (("passed", "PASS"), ("failed", "FAIL"),
                          ("error", "ERROR"), ("skipped", "SKIP")):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if _PRECEDENCE[label] > _PRECEDENCE.get(verdicts.get(name), -1):
                verdicts[name] = label
    if not verdicts:
        return
    terminalreporter.section("acceptance checks")
    for name in sorted(verdicts):
        title = name.removeprefix("test_").replace("_", " ")
        terminalreporter.write_line(f"{verdicts[name]:<5} {title}")
