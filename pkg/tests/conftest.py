import numpy as np
import pytest

from donnrough.optics import DetectorLayout, DonnModel, Geometry, PhaseMask

FULL_GEOMETRY = Geometry(200, 36e-6, 532e-9, 0.2794)


def random_model(n=8, depth=2, seed=0, distance=0.002, layout=None):
    rng = np.random.default_rng(seed)
    g = Geometry(n, 36e-6, 532e-9, distance)
    masks = [PhaseMask(rng.uniform(0, 2 * np.pi, (n, n))) for _ in range(depth)]
    return DonnModel(g, masks, layout)


def random_field(n=8, seed=0, batch=()):
    rng = np.random.default_rng(seed)
    shape = tuple(batch) + (n, n)
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def tiny_layout(n=4):
    """Ten 1x1 detectors for grids too small for the even layout."""
    cells = [(r, c) for r in range(n) for c in range(n)][:10]
    return DetectorLayout(tuple((r, c, 1, 1) for r, c in cells))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def bar_digits(count, seed):
    """Synthetic 28x28 'digits': class c is a horizontal bar at row 2 + 2c."""
    r = np.random.default_rng(seed)
    labels = r.integers(0, 10, count)
    images = r.integers(0, 30, (count, 28, 28)).astype(np.uint8)
    for i, c in enumerate(labels):
        images[i, 2 + 2 * c:6 + 2 * c, 4:24] += 200
    return images, labels


@pytest.fixture(scope="session")
def tiny_task(tmp_path_factory):
    """IDX files for a separable 10-class task plus config overrides for a 40x40 network."""
    from donnrough.dataio import write_idx

    d = tmp_path_factory.mktemp("tiny_task")
    write_idx(*bar_digits(200, 0), d / "train-img", d / "train-lbl")
    write_idx(*bar_digits(100, 1), d / "test-img", d / "test-lbl")
    return {
        "train_images": str(d / "train-img"), "train_labels": str(d / "train-lbl"),
        "test_images": str(d / "test-img"), "test_labels": str(d / "test-lbl"),
        "n": 40, "distance": 0.005, "epochs": 3, "batch_size": 20,
        "slr": {"block_size": 8, "outer_iters": 2},
    }


# one summary line per acceptance criterion, whatever the outcome
_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed and not rep.skipped):
        return
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    if mark.args[0] not in _criteria or status != "PASS":
        _criteria[mark.args[0]] = (status, item.name, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, name, detail = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {name}  {detail}".rstrip())
