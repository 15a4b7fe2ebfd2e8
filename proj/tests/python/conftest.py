import os
import shutil

import pytest


@pytest.fixture(scope="session")
def cli():
    path = os.environ.get("COUGHFUSE_CLI") or shutil.which("coughfuse")
    if not path:
        pytest.skip("coughfuse executable not available")
    return path


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    import coughfuse

    out = tmp_path_factory.mktemp("corpus")
    coughfuse.synth(out, n_files=50, sample_rate=16000, min_duration_s=0.4, max_duration_s=0.8)
    return out
