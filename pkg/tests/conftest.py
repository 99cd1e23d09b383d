from hypothesis import settings

# first calls may compile numba kernels; wall-clock deadlines would be flaky
settings.register_profile("sbrp", deadline=None)
settings.load_profile("sbrp")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
