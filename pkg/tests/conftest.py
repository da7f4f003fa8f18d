import sys

import numpy as np
import pytest

from fedcell.geometry import MobilityConfig, load_layout
from fedcell.env import PowerControlEnv, build_action_space
from fedcell.radio import RadioParams


def rect_layout(w=18.0, h=6.0, cells=((4.5, 3, 3), (13.5, 3, 3)), panels=(), name="rect"):
    return load_layout({
        "name": name,
        "height": 4.0,
        "outline": [[0, 0], [w, 0], [w, h], [0, h]],
        "panels": [list(map(list, p)) for p in panels],
        "cells": [list(c) for c in cells],
    })


# Single cell, one UE at 6.32 m LoS: SNR is 12.0 / 13.5 / 15.0 / 16.5 dB over the
# four levels (CQI 10 to 13), each 1.5 dB step up gains one CQI, so 24 dBm
# strictly dominates. The noise floor puts the levels on the steepest part of
# the CQI rate table, which gives the widest dominance margin.
SOLO_NOISE_DBM = -49.0
SOLO_UE = (10.5, 3.0, 1.0)


def solo_env(seed=0, steps=100):
    layout = rect_layout(cells=((4.5, 3, 3),), name="solo")
    space = build_action_space([19.5, 21.0, 22.5, 24.0], 1, "full")
    return PowerControlEnv(
        layout, RadioParams(noise_power_dbm=SOLO_NOISE_DBM), MobilityConfig(n_ues=1), space,
        steps_per_episode=steps, static_positions=[SOLO_UE], seed=seed,
    )


@pytest.fixture
def room_a():
    return load_layout("A")


@pytest.fixture
def small_env():
    """Room A with few UEs and short episodes for fast functional tests."""
    layout = load_layout("A")
    return PowerControlEnv(layout, mobility=MobilityConfig(n_ues=6), steps_per_episode=10, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, line = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {line}")
