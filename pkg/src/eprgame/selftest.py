"""Quick oracle checks run by ``eprgame selftest``.

Each check is independent and cheap (well under a minute in total); the full
property and acceptance suites live in the test directory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .metrics import chsh_value, classical_chsh_table
from .pte_exact import NO_EQUILIBRIUM, eliminate_round, pte_solve, solve_batch
from .pte_soft import SoftSolver, smooth_extremum
from .quantum import DensityMatrix, born_joint_prob, singlet_closed_form, target_histogram
from .rewards import make_model, sample_hidden_batch
from .scenario import RewardModelConfig, ScenarioConfig, build_outcome_subgame, setting_pairs
from .training import expected_histogram, kl_divergence


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _classical_bound() -> tuple[bool, str]:
    table = classical_chsh_table()
    best = max(abs(s) for _, s in table)
    n_best = sum(1 for _, s in table if s == 2)
    return best == 2 and n_best == 8 and len(table) == 16, f"max |S|={best}, assignments with S=+2: {n_best}/16"


def _born_chsh() -> tuple[bool, str]:
    s = chsh_value(target_histogram(ScenarioConfig()).cells).s_max
    return abs(s - 2 * math.sqrt(2)) < 1e-12, f"max |S|={s:.15f}"


def _singlet_closed_form() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    rho = DensityMatrix.singlet()
    worst = 0.0
    for ta, tb in rng.uniform(-math.pi, math.pi, size=(200, 2)):
        for x in (1, -1):
            for y in (1, -1):
                worst = max(worst, abs(born_joint_prob(rho, ta, tb, x, y) - singlet_closed_form(ta - tb, x, y)))
    return worst < 1e-12, f"max deviation {worst:.2e}"


def _smooth_extremum() -> tuple[bool, str]:
    v = smooth_extremum([1.0, 3.0], [1.0, 1.0], 1.0, "max")
    ref = math.log((math.e + math.e**3) / 2)
    return abs(v - ref) < 1e-12, f"{v:.12f} vs {ref:.12f}"


def _kl_point_mass() -> tuple[bool, str]:
    p = np.zeros(16)
    p[3] = 1.0
    v, _ = kl_divergence(p, np.full(16, 1 / 16), 1e-15)
    return abs(v - math.log(16)) < 1e-9, f"{v:.12f} vs ln 16"


def _elimination_example() -> tuple[bool, str]:
    game = build_outcome_subgame(ScenarioConfig(), setting_pairs()[0])
    game = game.with_payoffs([[4, 1, 2, 3], [4, 2, 1, 3]])
    remaining, thresholds = eliminate_round(game, game.leaves)
    leaf = pte_solve(game).leaf
    ok = thresholds == (2.0, 2.0) and leaf == game.leaves[0]
    return ok, f"round-1 thresholds {thresholds}, solution leaf {game.node(leaf).label}"


def _random_games(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(4 * n, 2, 4))
    srt = np.sort(U, axis=2)
    keep = (np.diff(srt, axis=2) >= 0.05).all(axis=(1, 2))
    return U[keep][:n]


def _soft_matches_exact() -> tuple[bool, str]:
    structure = build_outcome_subgame(ScenarioConfig(), setting_pairs()[0]).structure
    U = _random_games(500, 11)
    leaf = solve_batch(structure, U)
    ok = leaf >= 0
    dist = SoftSolver(structure, 1e-3).forward(U[ok]).distribution
    mass = dist[np.arange(ok.sum()), leaf[ok]]
    n_none = int((leaf == NO_EQUILIBRIUM).sum())
    return bool(mass.min() >= 0.999), f"{ok.sum()} solvable games, min mass {mass.min():.6f}, {n_none} without PTE"


def _pareto() -> tuple[bool, str]:
    structure = build_outcome_subgame(ScenarioConfig(), setting_pairs()[0]).structure
    U = _random_games(500, 12)
    leaf = solve_batch(structure, U)
    bad = 0
    for u, z in zip(U, leaf):
        if z < 0:
            continue
        dominated = np.all(u >= u[:, [z]], axis=0) & np.any(u > u[:, [z]], axis=0)
        bad += int(dominated.any())
    return bad == 0, f"{bad} dominated solutions"


def _gradient(kind: str) -> tuple[bool, str]:
    cfg = ScenarioConfig()
    cfg = replace(cfg, reward_model=replace(RewardModelConfig(), kind=kind, initial_offset=0.2))
    model = make_model(cfg.reward_model)
    target = target_histogram(cfg).cells
    lam = sample_hidden_batch(3, 0, 6)
    tau = 0.1

    def loss(values):
        h = expected_histogram(model.with_params(values), cfg, tau, lam)
        return kl_divergence(h.cells, target)[0]

    h = expected_histogram(model, cfg, tau, lam)
    grad = h.pullback(kl_divergence(h.cells, target)[1])
    idx = np.arange(len(grad))[:: max(1, len(grad) // 6)]
    fd = []
    for i in idx:
        e = np.zeros(len(grad))
        e[i] = 1e-5
        fd.append((loss(model.params.values + e) - loss(model.params.values - e)) / 2e-5)
    fd = np.array(fd)
    err = np.abs(fd - grad[idx]).max() / max(np.abs(fd).max(), 1e-12)
    return err < 1e-3, f"{kind}: relative error {err:.2e} on {len(idx)} parameters"


def _hidden_determinism() -> tuple[bool, str]:
    a = sample_hidden_batch(5, 10, 100)
    b = np.concatenate([sample_hidden_batch(5, 10, 37), sample_hidden_batch(5, 47, 63)])
    ok = np.array_equal(a, b) and bool(np.all((a >= 0) & (a < 2 * math.pi)))
    return ok, "block-split stream identical" if ok else "stream depends on block split"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "classical_chsh_bound": _classical_bound,
    "born_target_chsh": _born_chsh,
    "singlet_closed_form": _singlet_closed_form,
    "smooth_extremum": _smooth_extremum,
    "kl_point_mass": _kl_point_mass,
    "elimination_example": _elimination_example,
    "soft_matches_exact": _soft_matches_exact,
    "pte_pareto": _pareto,
    "gradient_ansatz": lambda: _gradient("ansatz"),
    "gradient_mlp": lambda: _gradient("mlp"),
    "hidden_variable_stream": _hidden_determinism,
}


def run_selftest() -> list[CheckResult]:
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))
    return out
