"""Shared fixtures: a tiny trained checkpoint and a service test client."""

import numpy as np
import pytest

from revae.config import validate_config
from revae.training import fit


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """One-epoch run on a small synthetic set; enough for contract tests."""
    out = tmp_path_factory.mktemp("tiny_run")
    cfg = validate_config({
        "objective": "revae",
        "dataset": {"kind": "synthetic", "n": 96, "n_test": 48, "seed": 5},
        "hidden": 24,
        "m_notc": 4,
        "f": 0.5,
        "seed": 7,
        "epochs": 1,
        "batch_size": 24,
        "lr": 1e-3,
        "k_sup": 2,
        "k_unsup": 2,
    })
    final, best, _ = fit(cfg, out_dir=out)
    return out / "final.ckpt"


@pytest.fixture(scope="session")
def service_client(tiny_checkpoint):
    from fastapi.testclient import TestClient

    from revae.service import ServiceState, build_app
    from revae.training import load_checkpoint

    state = ServiceState(load_checkpoint(tiny_checkpoint))
    app = build_app(state)
    with TestClient(app, raise_server_exceptions=False) as client:
        yield client
