import pytest

from socest.cell_model import CellParams, CellParamsTable, OcvCurve, OcvCurveSet
from socest.defaults import default_ocv, default_params


@pytest.fixture
def params():
    return CellParams(25.0, 5.0, 0.008, 0.004, 2500.0, 0.006, 20000.0)


@pytest.fixture
def curve():
    return default_ocv().curves[1][1]


@pytest.fixture
def line():
    return OcvCurve(((0.0, 3.0), (1.0, 4.2)))


@pytest.fixture
def table():
    return default_params()


@pytest.fixture
def curves():
    return default_ocv()


@pytest.fixture
def flat_table(params):
    return CellParamsTable((params,))


@pytest.fixture
def single_curve(curve):
    return OcvCurveSet.single(curve)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None and (rep.when == "call" or rep.failed):
        number, title = marker.args
        detail = dict(item.user_properties).get("detail", "")
        results = item.config.stash.setdefault(ACCEPTANCE, {})
        if rep.failed or number not in results:
            results[number] = (title, rep.passed, detail)
    return rep


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, None)
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results):
        title, passed, detail = results[number]
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
