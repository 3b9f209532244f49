def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or rep.when not in ("call", "setup"):
                continue
            if rep.when == "setup" and outcome != "skipped":
                continue
            number = int(nodeid.split("test_criterion_")[1][:2])
            detail = dict(rep.user_properties).get("acceptance")
            if detail is None and outcome == "skipped":
                detail = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
            if detail is None:
                detail = rep.longreprtext.strip().splitlines()[-1] if rep.longreprtext else ""
            label = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[outcome]
            lines.append((number, f"{label} criterion {number}: {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
