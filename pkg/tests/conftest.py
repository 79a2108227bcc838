import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from padkit.data import Manifest, Sample  # noqa: E402
from padkit.toy import NO_CAST, make_toy_corpus  # noqa: E402


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    """Two small toy datasets at 64x64: T (no cast) and U (no cast, other seed)."""
    root = tmp_path_factory.mktemp("toy")
    make_toy_corpus(root, "T", n_pairs=40, size=64, cast=NO_CAST, seed=11)
    make_toy_corpus(root, "U", n_pairs=20, size=64, cast=NO_CAST, seed=12)
    return root


def make_samples(n_bona, n_attack, dataset_id="D"):
    rows = [Sample(f"{dataset_id}/bf_{i}.png", "image", "bona_fide", "", dataset_id, f"bf_{i}") for i in range(n_bona)]
    rows += [Sample(f"{dataset_id}/at_{i}.png", "image", "attack", "print", dataset_id, f"at_{i}") for i in range(n_attack)]
    return Manifest(rows)


# -- acceptance reporting ----------------------------------------------------
# Tests marked ``criterion(n, text)`` get one PASS/FAIL line each in the
# terminal summary (and inline under -v).

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, text = mark.args
    failed = rep.failed or (rep.when == "call" and rep.skipped)
    if rep.when == "call" or failed:
        prev = _CRITERIA.get(number, (True, text))
        _CRITERIA[number] = (prev[0] and rep.passed and not failed, text)
        if rep.when == "call":
            status = "PASS" if _CRITERIA[number][0] else "FAIL"
            tr = item.config.pluginmanager.get_plugin("terminalreporter")
            if tr is not None and item.config.getoption("verbose") > 0:
                tr.write_line(f"\nACCEPTANCE {number:>2} {status}: {text}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, text = _CRITERIA[number]
        terminalreporter.write_line(f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}: {text}")
