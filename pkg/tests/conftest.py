def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines, which capture would otherwise hide for passing tests."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) != "call":
                continue
            lines += [ln for ln in rep.capstdout.splitlines() if ln.startswith("CRITERION ")]
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(ln)
