import sys
import time

import numpy as np
import pytest

from ctts import acoustic as ac
from ctts import frontend as fe
from ctts import modelfile
from ctts import vocoder as voc
from ctts.model import build_model, init_random

TINY_FE = fe.FrontendConfig(n_enc=4, n_dec=2, d_model=16, heads=2, d_ff=32, max_len=12)
TINY_AC = ac.AcousticConfig(
    d_model=16, heads=2, n_enc_blocks=1, n_dec_blocks=1, conv_channels=24, conv_kernel=3,
    var_channels=8, n_mels=8, n_var_bins=16,
)
TINY_VOC = voc.VocoderConfig(h=32, d=32, n_mels=8, cond_dim=8, emb_dim=4, frame_hop=16)


def tiny_model(seed=0, optimized=False):
    plan = fe.SHARED_PLAN if optimized else fe.BASELINE_PLAN
    return build_model(TINY_FE, plan, TINY_AC, TINY_VOC, seed, int8_acoustic=optimized,
                       sparse_vocoder=optimized, meta={"preset": "tiny", "seed": seed})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def release_models():
    return {p: init_random(p, 0) for p in ("baseline", "optimized")}


@pytest.fixture(scope="session")
def release_dirs(release_models, tmp_path_factory):
    root = tmp_path_factory.mktemp("release")
    out = {}
    for preset, m in release_models.items():
        modelfile.save(m, root / preset)
        out[preset] = root / preset
    return out


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny") / "model"
    modelfile.save(tiny_model(0, optimized=True), d)
    return d


SUITE_BUDGET_S = 300.0


def pytest_sessionstart(session):
    session.config._ctts_start = time.time()


def _suite_line(config):
    elapsed = time.time() - config._ctts_start
    ok = elapsed < SUITE_BUDGET_S
    return ok, f"ACCEPTANCE 9   {'PASS' if ok else 'FAIL'}  suite: full run < {SUITE_BUDGET_S:.0f} s  ({elapsed:.1f} s)"


def pytest_sessionfinish(session, exitstatus):
    if exitstatus == 0 and not _suite_line(session.config)[0]:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
    terminalreporter.write_line(_suite_line(config)[1])
