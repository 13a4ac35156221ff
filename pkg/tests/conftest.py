def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines recorded by tests/test_acceptance.py."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) != "call":
                continue
            lines.extend(v for k, v in rep.user_properties if k == "criterion")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
