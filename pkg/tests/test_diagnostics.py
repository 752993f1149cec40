from __future__ import annotations

import pytest

from swincd.diagnostics import SECTIONS, ComponentResult, network_spot_check, run_gradient_suite
from swincd.settings import ModelConfig


@pytest.mark.parametrize("section", ["primitives", "swin", "pam", "losses"])
def test_component_gradients_match_central_differences(section):
    results = run_gradient_suite(sections=[section], instances=5, seed=1)
    assert results
    failed = [r.line() for r in results if not r.passed]
    assert not failed, "\n".join(failed)


def test_suite_covers_every_component_once():
    names = [r.component for r in run_gradient_suite(sections=["swin", "pam", "losses"], instances=1)]
    assert names == [
        "window_attention", "swin_block_pair", "patch_merge", "patch_unmerge",
        "pam", "loss.wbce", "loss.ssim", "loss.siou",
    ]


def test_result_line():
    assert ComponentResult("relu", 2e-5, 1e-4, 5).line().startswith("PASS relu")
    assert not ComponentResult("relu", 2e-3, 1e-4, 5).passed


@pytest.mark.slow
def test_network_spot_check_per_group():
    results = network_spot_check(ModelConfig.toy(), per_group=2, seed=3)
    assert [r.component for r in results] == ["network.encoder", "network.head"]
    assert all(r.passed for r in results), [r.line() for r in results]


def test_sections_are_the_cli_choices():
    assert SECTIONS == ("primitives", "swin", "pam", "losses", "network")
