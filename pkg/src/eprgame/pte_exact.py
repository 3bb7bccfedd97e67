"""Exact Perfectly Transparent Equilibrium by iterated maximin elimination.

Each round computes, for every player, the best payoff the player can
guarantee over the outcomes still on the table (max over pure strategies of
the min over consistent surviving leaves).  All players eliminate at once:
a leaf survives only if it meets every player's threshold.  Rounds repeat
until nothing more is eliminated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .game import Game, GameInputError, GameStructure

NONGENERIC = -1
NO_EQUILIBRIUM = -2


class PTEError(Exception):
    def __init__(self, message: str, trace: EliminationTrace):
        super().__init__(message)
        self.trace = trace


class NonGenericError(PTEError):
    """Fixpoint reached with more than one surviving leaf."""

    def __init__(self, survivors: frozenset[int], trace: EliminationTrace):
        super().__init__(f"elimination stalled with {len(survivors)} survivors {sorted(survivors)}", trace)
        self.survivors = survivors


class NoEquilibriumError(PTEError):
    """Every leaf was eliminated."""

    def __init__(self, trace: EliminationTrace):
        super().__init__("every outcome was eliminated; no PTE exists", trace)


@dataclass(frozen=True)
class EliminationRound:
    thresholds: tuple[float, ...]
    eliminated: tuple[int, ...]


@dataclass(frozen=True)
class EliminationTrace:
    rounds: tuple[EliminationRound, ...]
    surviving: frozenset[int]


class PTESolution(NamedTuple):
    leaf: int
    trace: EliminationTrace


def _bits(structure: GameStructure, leaves: Iterable[int]) -> int:
    position = {leaf: k for k, leaf in enumerate(structure.leaf_ids)}
    word = 0
    for leaf in leaves:
        try:
            word |= 1 << position[leaf]
        except KeyError:
            raise GameInputError(f"unknown leaf id {leaf}") from None
    return word


def _maximin_bits(structure: GameStructure, payoffs: np.ndarray, player: int, rem: int) -> float:
    best = -math.inf
    row = payoffs[player]
    for word in structure.bitsets[player]:
        hit = word & rem
        if not hit:
            continue
        worst = math.inf
        k = 0
        while hit:
            if hit & 1:
                worst = min(worst, row[k])
            hit >>= 1
            k += 1
        best = max(best, worst)
    return best


def maximin(game: Game, player: int, remaining: Iterable[int]) -> float:
    """Best payoff ``player`` can guarantee among ``remaining`` leaves.

    Strategies with no consistent surviving leaf count as -inf.
    """
    remaining = set(remaining)
    if not remaining:
        raise GameInputError("maximin needs a nonempty set of remaining leaves")
    structure = game.structure
    return _maximin_bits(structure, game.payoff_matrix(), player, _bits(structure, remaining))


def _round_bits(structure: GameStructure, payoffs: np.ndarray, rem: int) -> tuple[int, tuple[float, ...]]:
    thresholds = tuple(
        float(_maximin_bits(structure, payoffs, p, rem)) for p in range(structure.player_count)
    )
    keep = 0
    for k in range(structure.leaf_count):
        if rem >> k & 1 and all(payoffs[p, k] >= thresholds[p] for p in range(structure.player_count)):
            keep |= 1 << k
    return keep, thresholds


def eliminate_round(game: Game, remaining: Iterable[int]) -> tuple[frozenset[int], tuple[float, ...]]:
    """One simultaneous elimination round; returns (survivors, per-player thresholds)."""
    structure = game.structure
    remaining = set(remaining)
    if not remaining:
        raise GameInputError("eliminate_round needs a nonempty set of remaining leaves")
    keep, thresholds = _round_bits(structure, game.payoff_matrix(), _bits(structure, remaining))
    return _leaves_of(structure, keep), thresholds


def _leaves_of(structure: GameStructure, word: int) -> frozenset[int]:
    return frozenset(leaf for k, leaf in enumerate(structure.leaf_ids) if word >> k & 1)


def pte_solve(game: Game) -> PTESolution:
    """Iterate elimination to a fixpoint and return the unique surviving leaf.

    Raises NonGenericError if several leaves survive and NoEquilibriumError if
    none do; both carry the full trace.
    """
    structure = game.structure
    payoffs = game.payoff_matrix()
    rem = (1 << structure.leaf_count) - 1
    rounds = []
    while True:
        keep, thresholds = _round_bits(structure, payoffs, rem)
        rounds.append(EliminationRound(thresholds, tuple(sorted(_leaves_of(structure, rem & ~keep)))))
        if keep == rem or keep == 0:
            break
        rem = keep
    trace = EliminationTrace(tuple(rounds), _leaves_of(structure, keep))
    if keep == 0:
        raise NoEquilibriumError(trace)
    if keep & (keep - 1):
        raise NonGenericError(trace.surviving, trace)
    return PTESolution(next(iter(trace.surviving)), trace)


def solve_batch(structure: GameStructure, payoffs: np.ndarray) -> np.ndarray:
    """Solve many games sharing one tree shape.

    ``payoffs`` has shape (n_games, players, leaves) in ``structure.leaf_ids``
    order.  Returns, per game, the surviving leaf's position, or NONGENERIC /
    NO_EQUILIBRIUM.
    """
    U = np.asarray(payoffs, dtype=float)
    n, players, leaves = U.shape
    if players != structure.player_count or leaves != structure.leaf_count:
        raise GameInputError(f"payoff batch shape {U.shape} does not match the game structure")
    rem = np.ones((n, leaves), dtype=bool)
    active = np.ones(n, dtype=bool)
    for _ in range(leaves + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        r = rem[idx]
        keep = r.copy()
        for p in range(players):
            u = U[idx, p, :]
            mask = structure.masks[p][None, :, :] & r[:, None, :]
            worst = np.where(mask, u[:, None, :], np.inf).min(axis=2)
            worst[~mask.any(axis=2)] = -np.inf
            keep &= u >= worst.max(axis=1)[:, None]
        changed = (keep != r).any(axis=1)
        rem[idx] = keep
        active[idx] = changed & keep.any(axis=1)
    count = rem.sum(axis=1)
    out = np.where(count == 1, rem.argmax(axis=1), NONGENERIC)
    out[count == 0] = NO_EQUILIBRIUM
    return out
