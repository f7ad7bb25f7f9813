"""Finite-difference validation of every analytic gradient path.

Checks run on small random networks in general position; configurations with
a pre-activation within 50 steps of a relu kink are skipped deterministically
(central differences are meaningless across the kink).
"""

import pytest

from helpers import gradcheck_model

TOL = 1e-4


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_single_head_full_stack(seed):
    assert gradcheck_model("homo", seed) < TOL


@pytest.mark.parametrize("seed", [10, 11, 12])
def test_dual_head_full_stack(seed):
    assert gradcheck_model("hetero", seed) < TOL


def test_single_head_without_dropout():
    assert gradcheck_model("homo", 20, dropout=0.0) < TOL


def test_dual_head_without_dropout():
    assert gradcheck_model("hetero", 21, dropout=0.0) < TOL


def test_dual_head_wider_batch():
    assert gradcheck_model("hetero", 30, n_instances=8, hidden_width=6) < TOL
