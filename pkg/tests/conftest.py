import pytest

ACCEPTANCE = []


class Criterion:
    def __init__(self):
        self.line = None

    def report(self, number, ok, detail):
        self.line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE.append(self.line)
        print(self.line)


@pytest.fixture
def criterion(request):
    c = Criterion()
    yield c
    if c.line is None:
        line = f"criterion {request.node.name}: FAIL  (errored before reporting)"
        ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
