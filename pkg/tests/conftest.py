import pytest
import torch

from vuga.backbone import BackboneSpec, FrozenBackbone
from vuga.model import ModelConfig, build_model, miniature_config
from vuga.synthetic import make_blur_set


@pytest.fixture(scope="session")
def swin_backbone():
    """SwinV2-T trunk with seeded random weights (pretrained weights are not fetched in tests)."""
    return FrozenBackbone(BackboneSpec(pretrained_source="random:0"))


@pytest.fixture(scope="session")
def swin_cfg():
    return ModelConfig(pretrained_source="random:0")


@pytest.fixture
def tiny_cfg():
    return ModelConfig(resolution=64, backbone="convpyramid", stage_channels=(8, 16, 32, 64),
                       pretrained_source="random:0", fusion_channels=16, regressor_hidden=16)


@pytest.fixture
def mini_model():
    torch.manual_seed(0)
    return build_model(miniature_config(), seed=0)


@pytest.fixture(scope="session")
def blur_set(tmp_path_factory):
    return make_blur_set(tmp_path_factory.mktemp("blur16"), n=16)


@pytest.fixture(scope="session")
def small_blur_set(tmp_path_factory):
    return make_blur_set(tmp_path_factory.mktemp("blur_small"), n=12, size=(64, 128))


# one PASS/FAIL line per acceptance criterion at the end of the run
_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = (marker.args[0], marker.args[1])
    if report.when == "call" or report.failed or report.skipped:
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        if _criteria.get(key) in (None, "PASS"):
            _criteria[key] = status


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    order = sorted(_criteria.items(), key=lambda kv: (isinstance(kv[0][0], str), str(kv[0][0]).zfill(3)))
    for (number, title), status in order:
        terminalreporter.write_line(f"{status} criterion {number}: {title}")
