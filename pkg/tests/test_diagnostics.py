import math

import numpy as np
import pytest
import torch

from core.config import OracleConfig
from features.oracle import planted_joint, xor_joint
from services.diagnostics import ToySelector, check_identity, run_oracle_suite, train_toy_selector


def test_xor_identity_row():
    row = check_identity(xor_joint(), 2)
    assert row["best_subset"] == [0, 1]
    assert row["cmi_bits"] == pytest.approx(1.0, abs=1e-9)
    assert row["cmi_nats"] == pytest.approx(math.log(2.0), abs=1e-9)
    assert row["agree"]


def test_toy_selector_starts_uniform():
    sel = ToySelector(xor_joint())
    out = sel(torch.arange(8))
    assert out.shape == (8, 3)
    assert torch.count_nonzero(out) == 0


def test_toy_selector_finds_planted_parents():
    joint, parents = planted_joint(5, 2, np.random.default_rng(11))
    cfg = OracleConfig(d=5, k=2, selector_steps=300)
    assert train_toy_selector(joint, 2, cfg, seed=0) == parents


class TestSuite:
    def test_small_suite(self):
        report = run_oracle_suite(OracleConfig(joints=4, selector_steps=200))
        assert report["ok"]
        assert report["errors"] == []
        assert report["checks"]["identity"]["agree"] == 4
        assert report["checks"]["independent"]["tied"]
        assert report["checks"]["toy_selector"]["rate"] >= 0.75

    @pytest.mark.slow
    def test_twenty_joints(self):
        report = run_oracle_suite(OracleConfig(joints=20, d=5, k=2))
        assert report["checks"]["identity"]["agree"] == 20
        assert report["checks"]["toy_selector"]["rate"] >= 0.9
