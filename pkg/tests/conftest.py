import torch

torch.set_num_threads(1)

_ACCEPTANCE_LINES = []


def record_acceptance(number, passed, text):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {text}"
    _ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(line)
