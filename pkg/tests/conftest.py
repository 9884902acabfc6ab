import json
import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, ROOT)

from core_model import KeyRing  # noqa: E402
from params import config_from_dict  # noqa: E402
from underlay import ProtocolKind, ProtocolParams  # noqa: E402

EXAMPLE_DIR = os.path.join(ROOT, "example")


@pytest.fixture
def example_path():
    def path(name):
        return os.path.join(EXAMPLE_DIR, f"{name}.json")

    return path


@pytest.fixture
def example_config(example_path):
    """读取 example/ 下的场景配置，允许覆盖个别字段"""

    def load(name, **overrides):
        with open(example_path(name), "r", encoding="utf-8") as f:
            data = json.load(f)
        data.update(overrides)
        return config_from_dict(data)

    return load


@pytest.fixture
def keyring():
    return KeyRing(0)


@pytest.fixture
def syncfin_params():
    return ProtocolParams.for_protocol(ProtocolKind.SYNCFIN, 7, 2, 1)
