"""Shared test plumbing: collects the numbered checklist lines emitted by
test_acceptance.py and replays them in the terminal summary, where pytest's
output capture can't swallow them."""

checklist = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not checklist:
        return
    terminalreporter.section("release checklist")
    for _, line in sorted(checklist):
        terminalreporter.write_line(line)
