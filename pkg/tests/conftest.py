import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance PASS/FAIL lines past output capture."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def extractor():
    from coadain.metrics import FeatureExtractor

    return FeatureExtractor.default()


@pytest.fixture
def tiny_model_config():
    from coadain.networks import ModelConfig

    return ModelConfig(num_components=2, style_dim=4, base_filters=8,
                       num_downsamples=2, num_res_blocks=2, image_size=(16, 32),
                       discriminator_scales=2, mlp_hidden=16)
