"""Smooth relaxation of the PTE solver with an annealed decision temperature.

Hard extrema become weighted log-sum-exp at temperature ``tau`` and hard
eliminations become sigmoid retention factors.  Retention is tracked in the
log domain, so nothing underflows however many rounds run.

Two knobs keep the relaxation consistent with the exact solver as
``tau -> 0``:

``margin``
    shifts each retention sigmoid by ``margin`` (in units of ``tau``) so that
    an outcome sitting exactly on a threshold is kept, as ``>=`` demands,
    instead of being halved every round.
``presence_scale``
    the soft extrema weight each leaf by ``retention ** (presence_scale / tau)``.
    An outcome eliminated by a payoff gap ``g`` then carries a penalty of
    about ``presence_scale * g / tau`` in later extrema, so outcomes removed by
    one player stop dragging down another player's guarantee.  ``None`` uses
    the raw retention as weights.

With ``margin=0`` and ``presence_scale=None`` the relaxation is the plain
retention-weighted form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .game import Game, GameInputError, GameStructure

DEFAULT_ROUNDS = 4
DEFAULT_MARGIN = 8.0
DEFAULT_PRESENCE_SCALE = 1.0
EXCLUDE_MASS = 1e-12
RETENTION_FLOOR = 1e-300

_LOG_EXCLUDE = math.log(EXCLUDE_MASS)
_LOG_FLOOR = math.log(RETENTION_FLOOR)


@dataclass(frozen=True)
class SoftSolveResult:
    distribution: np.ndarray
    retention_rounds: tuple[np.ndarray, ...]
    temperature: float
    floor_hit: bool = False


@dataclass(frozen=True)
class TemperatureSchedule:
    start: float = 0.1
    end: float = 0.01
    total_steps: int = 2000
    shape: str = "geometric"


def smooth_extremum(values, weights, temperature: float, mode: str = "max") -> float:
    """Weighted log-sum-exp extremum.

    max: ``tau * ln(sum w e^{v/tau} / sum w)``; min mirrors it with ``-v``.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative and not all zero")
    sign = _sign(mode)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    return float(sign * temperature * (logsumexp(sign * v / temperature + lw) - logsumexp(lw)))


def _sign(mode: str) -> int:
    if mode == "max":
        return 1
    if mode == "min":
        return -1
    raise ValueError(f"mode must be 'min' or 'max', got {mode!r}")


def anneal_temperature(step: int, schedule: TemperatureSchedule) -> float:
    start, end = float(schedule.start), float(schedule.end)
    if not start >= end > 0:
        raise ValueError("temperature schedule needs start >= end > 0")
    if schedule.total_steps <= 0 or step >= schedule.total_steps:
        return end
    frac = max(step, 0) / schedule.total_steps
    if schedule.shape == "geometric":
        return start * (end / start) ** frac
    if schedule.shape == "linear":
        return start + (end - start) * frac
    raise ValueError(f"unknown schedule shape {schedule.shape!r}")


# -- batched engine ---------------------------------------------------------


def _presence_factor(tau: float, presence_scale: float | None) -> float:
    return 1.0 if presence_scale is None else presence_scale / tau


def _maximin_forward(mask: np.ndarray, u: np.ndarray, lw: np.ndarray, tau: float):
    """Soft maximin of one player for a batch.

    mask (S, L) strategy/leaf consistency; u (N, L) payoffs; lw (N, L) log
    presence weights.  Returns thresholds (N,) and the cache for the reverse
    pass.
    """
    LW = np.where(mask[None, :, :], lw[:, None, :], -np.inf)
    with np.errstate(invalid="ignore"):
        mass = logsumexp(LW, axis=2)
        incl = mass >= _LOG_EXCLUDE
        A = LW - u[:, None, :] / tau
        la = logsumexp(A, axis=2)
        inner = np.where(incl, -tau * (la - mass), 0.0)
        ow = np.where(incl, mass, -np.inf)
        B = inner / tau + ow
        any_incl = incl.any(axis=1)
        lse_b = logsumexp(np.where(any_incl[:, None], B, 0.0), axis=1)
        lse_o = logsumexp(np.where(any_incl[:, None], ow, 0.0), axis=1)
        m = np.where(any_incl, tau * (lse_b - lse_o), -np.inf)
        rho = np.where(incl[:, :, None], np.exp(A - la[:, :, None]), 0.0)
        q = np.where(incl[:, :, None], np.exp(LW - mass[:, :, None]), 0.0)
        pi = np.where(incl, np.exp(B - lse_b[:, None]), 0.0)
        omega = np.where(incl, np.exp(ow - lse_o[:, None]), 0.0)
    return m, (rho, q, pi, omega)


def _maximin_backward(cache, g_m: np.ndarray, tau: float):
    rho, q, pi, omega = cache
    g_u = g_m[:, None] * np.einsum("ns,nsl->nl", pi, rho)
    coef = tau * (pi[:, :, None] * (q - rho) + (pi - omega)[:, :, None] * q)
    g_lw = g_m[:, None] * coef.sum(axis=1)
    return g_u, g_lw


@dataclass
class SoftTape:
    U: np.ndarray
    log_retention: list[np.ndarray]
    rounds: list[list[tuple[np.ndarray, np.ndarray, tuple]]]
    distribution: np.ndarray
    floor_hit: np.ndarray


class SoftSolver:
    """Batched soft PTE over games that share one tree shape."""

    def __init__(
        self,
        structure: GameStructure,
        temperature: float,
        rounds: int = DEFAULT_ROUNDS,
        margin: float = DEFAULT_MARGIN,
        presence_scale: float | None = DEFAULT_PRESENCE_SCALE,
    ):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        if rounds < 1:
            raise ValueError("rounds must be at least 1")
        self.structure = structure
        self.tau = float(temperature)
        self.rounds = int(rounds)
        self.margin = float(margin)
        self.presence_scale = presence_scale
        self._c = _presence_factor(self.tau, presence_scale)

    def thresholds(self, U: np.ndarray, log_r: np.ndarray):
        lw = self._c * log_r
        out = []
        for p in range(self.structure.player_count):
            m, cache = _maximin_forward(self.structure.masks[p], U[:, p, :], lw, self.tau)
            out.append((m, cache))
        return out

    def step(self, U: np.ndarray, log_r: np.ndarray):
        """One soft elimination round; returns new log retention and per-player records."""
        records = []
        new = log_r.copy()
        for p, (m, cache) in enumerate(self.thresholds(U, log_r)):
            finite = np.isfinite(m)
            z = np.where(finite[:, None], (U[:, p, :] - np.where(finite, m, 0.0)[:, None]) / self.tau + self.margin, np.inf)
            new = new + log_expit(z)
            records.append((z, finite, cache))
        return new, records

    def forward(self, payoffs: np.ndarray) -> SoftTape:
        U = np.asarray(payoffs, dtype=float)
        n, players, leaves = U.shape
        if players != self.structure.player_count or leaves != self.structure.leaf_count:
            raise GameInputError(f"payoff batch shape {U.shape} does not match the game structure")
        log_r = np.zeros((n, leaves))
        history, rounds = [log_r], []
        for _ in range(self.rounds):
            log_r, records = self.step(U, log_r)
            history.append(log_r)
            rounds.append(records)
        top = log_r.max(axis=1, keepdims=True)
        w = np.exp(log_r - top)
        dist = w / w.sum(axis=1, keepdims=True)
        return SoftTape(U, history, rounds, dist, top[:, 0] < _LOG_FLOOR)

    def backward(self, tape: SoftTape, g_dist: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(g_dist * distribution)`` w.r.t. the payoff batch."""
        dist = tape.distribution
        g_log = dist * (g_dist - (dist * g_dist).sum(axis=1, keepdims=True))
        g_U = np.zeros_like(tape.U)
        for k in range(self.rounds - 1, -1, -1):
            g_prev = g_log.copy()
            for p, (z, finite, cache) in enumerate(tape.rounds[k]):
                g_z = np.where(finite[:, None], g_log * expit(-z), 0.0)
                g_U[:, p, :] += g_z / self.tau
                g_m = -g_z.sum(axis=1) / self.tau
                g_u, g_lw = _maximin_backward(cache, np.where(finite, g_m, 0.0), self.tau)
                g_U[:, p, :] += g_u
                g_prev += self._c * g_lw
            g_log = g_prev
        return g_U


# -- single-game API --------------------------------------------------------


def _retention_logs(game: Game, retention) -> np.ndarray:
    r = np.asarray(retention, dtype=float)
    if r.shape != (len(game.leaves),):
        raise GameInputError(f"retention has shape {r.shape}, expected ({len(game.leaves)},)")
    if np.any(r < 0) or r.sum() <= 0:
        raise GameInputError("retention must be nonnegative with positive total mass")
    with np.errstate(divide="ignore"):
        return np.log(r)


def soft_maximin(
    game: Game,
    player: int,
    retention,
    temperature: float,
    presence_scale: float | None = DEFAULT_PRESENCE_SCALE,
) -> float:
    """Smooth counterpart of :func:`pte_exact.maximin`.

    ``retention`` is a per-leaf weight vector in ``game.leaves`` order.
    """
    log_r = _retention_logs(game, retention)
    c = _presence_factor(temperature, presence_scale)
    mask = game.structure.masks[player]
    lw = c * log_r
    if not np.any(np.where(mask, lw[None, :], -np.inf).max(axis=1) > -np.inf):
        raise GameInputError("no strategy of this player keeps any retained outcome")
    m, _ = _maximin_forward(mask, game.payoff_matrix()[player][None, :], lw[None, :], temperature)
    return float(m[0])


def soft_eliminate_round(
    game: Game,
    retention,
    temperature: float,
    margin: float = DEFAULT_MARGIN,
    presence_scale: float | None = DEFAULT_PRESENCE_SCALE,
) -> np.ndarray:
    """Multiply each leaf's retention by one sigmoid per player; no renormalisation."""
    log_r = _retention_logs(game, retention)
    solver = SoftSolver(game.structure, temperature, 1, margin, presence_scale)
    new, _ = solver.step(game.payoff_matrix()[None, :, :], log_r[None, :])
    return np.exp(new[0])


def soft_solve(
    game: Game,
    temperature: float,
    rounds: int = DEFAULT_ROUNDS,
    margin: float = DEFAULT_MARGIN,
    presence_scale: float | None = DEFAULT_PRESENCE_SCALE,
) -> SoftSolveResult:
    solver = SoftSolver(game.structure, temperature, rounds, margin, presence_scale)
    tape = solver.forward(game.payoff_matrix()[None, :, :])
    kept = tuple(np.maximum(np.exp(h[0]), RETENTION_FLOOR) for h in tape.log_retention[1:])
    return SoftSolveResult(tape.distribution[0].copy(), kept, float(temperature), bool(tape.floor_hit[0]))
