import numpy as np
import pytest

from rissim.channel import Position3D, RfConfig, build_cascaded_channel

RSU = Position3D(0.0, 40.0, 10.0)
RIS = Position3D(10.0, 20.0, 10.0)


def road_channels(rng, n_vehicles, m_elems, cfg=None):
    """Channels for vehicles dropped uniformly on the 100 m lane."""
    cfg = cfg or RfConfig()
    return [build_cascaded_channel(RSU, RIS, Position3D(float(x), 20.0, 1.0), cfg, m_elems)
            for x in rng.uniform(0, 100, n_vehicles)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = []


def record_verdict(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    _VERDICTS.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS):
        terminalreporter.write_line(line)
