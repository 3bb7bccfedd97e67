from __future__ import annotations

import numpy as np
import pytest

from eprgame.scenario import ScenarioConfig, build_outcome_subgame, setting_pairs


@pytest.fixture
def config() -> ScenarioConfig:
    return ScenarioConfig()


@pytest.fixture
def subgame(config):
    return build_outcome_subgame(config, setting_pairs()[0])


@pytest.fixture(scope="session")
def structure():
    return build_outcome_subgame(ScenarioConfig(), setting_pairs()[0]).structure


def general_position_games(n: int, seed: int, gap: float = 0.05) -> np.ndarray:
    """Normal payoffs (n, 2, 4) whose per-player values differ pairwise by >= gap."""
    rng = np.random.default_rng(seed)
    out = []
    while sum(len(o) for o in out) < n:
        U = rng.normal(size=(2 * n, 2, 4))
        keep = (np.diff(np.sort(U, axis=2), axis=2) >= gap).all(axis=(1, 2))
        out.append(U[keep])
    return np.concatenate(out)[:n]
