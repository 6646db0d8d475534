def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, with the measured detail."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py" not in rep.nodeid:
                continue
            props = dict(rep.user_properties)
            name = props.get("criterion", rep.nodeid.split("::")[-1])
            lines.append((rep.nodeid, f"[{'PASS' if rep.passed else 'FAIL'}] {name}: "
                                      f"{props.get('detail', 'no detail recorded')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
