import numpy as np
import pytest


@pytest.fixture(scope="session")
def acceptance_tmp(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")
