import ipaddress
import socket
from pathlib import Path

import pytest

from efsm_planner import Lexicon, build_catalog, load_models
from efsm_planner.efsm import KnowledgeBase

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures"
GOLDEN = HERE / "golden"

_LOCAL_NAMES = {"localhost", "127.0.0.1", "::1", ""}


def _is_loopback(host) -> bool:
    if host in _LOCAL_NAMES:
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


class NetworkBlocked(OSError):
    pass


# (number, text) -> [(number, text), passed so far]
_CRITERIA: dict = {}

_real_connect = socket.socket.connect
_real_connect_ex = socket.socket.connect_ex
_real_getaddrinfo = socket.getaddrinfo


def _guard_address(sock, address):
    if sock.family in (socket.AF_INET, socket.AF_INET6) and not _is_loopback(address[0]):
        raise NetworkBlocked(f"network access to {address[0]!r} is disabled in tests")


def _connect(self, address):
    _guard_address(self, address)
    return _real_connect(self, address)


def _connect_ex(self, address):
    _guard_address(self, address)
    return _real_connect_ex(self, address)


def _getaddrinfo(host, *args, **kwargs):
    if isinstance(host, bytes):
        host = host.decode()
    if host is not None and not _is_loopback(host):
        raise NetworkBlocked(f"name lookup for {host!r} is disabled in tests")
    return _real_getaddrinfo(host, *args, **kwargs)


def pytest_configure(config):
    # the whole suite runs with only loopback networking
    socket.socket.connect = _connect
    socket.socket.connect_ex = _connect_ex
    socket.getaddrinfo = _getaddrinfo


def pytest_unconfigure(config):
    socket.socket.connect = _real_connect
    socket.socket.connect_ex = _real_connect_ex
    socket.getaddrinfo = _real_getaddrinfo


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or report.failed:
        entry = _CRITERIA.setdefault(crit, [crit, True])
        entry[1] = entry[1] and report.passed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, text), passed in sorted(_CRITERIA.values(), key=lambda r: r[0][0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {text}")


@pytest.fixture(scope="session")
def camera_kb() -> KnowledgeBase:
    return load_models(FIXTURES / "camera.efsm")


@pytest.fixture(scope="session")
def camera(camera_kb):
    return camera_kb["camera"]


@pytest.fixture(scope="session")
def two_app_kb() -> KnowledgeBase:
    return load_models(FIXTURES)


@pytest.fixture(scope="session")
def lexicon() -> Lexicon:
    return Lexicon.load(FIXTURES / "apps.lex")


@pytest.fixture(scope="session")
def camera_catalog(camera_kb):
    return build_catalog(camera_kb)
