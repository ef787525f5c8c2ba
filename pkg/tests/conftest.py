import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = {
    "model.channels": 16, "model.encoder_layers": 1, "model.decoder_layers": 1, "model.sparseness": 8,
    "model.heads": 2, "model.ffn_hidden": 24, "model.conv_blocks": 2, "model.fc_hidden": 12,
    "model.template_size": 31, "model.search_size": 63, "model.stem_channels": (4, 6, 8),
    "data.frames": 24, "data.canvas": 128, "data.suite_seeds": (0,), "data.pairs_per_epoch": 8,
    "data.batch_size": 4, "data.epochs": 2, "data.fixed_pairs": 8, "data.max_gap": 10,
}


@pytest.fixture
def tiny_cfg():
    """Seconds-scale run configuration for plumbing tests."""
    from sparsett.config import toy_config

    return toy_config(**TINY)


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num, title = marker.args
    entry = _criteria.setdefault(num, {"title": title, "ok": True, "seconds": 0.0})
    entry["seconds"] += report.duration
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_criteria):
        e = _criteria[num]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {num}: {e['title']}  ({e['seconds']:.1f} s)")
