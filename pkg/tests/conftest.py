import util


def pytest_terminal_summary(terminalreporter):
    if util.acceptance_log:
        terminalreporter.section("acceptance gate")
        for line in util.acceptance_log:
            terminalreporter.write_line(line)
