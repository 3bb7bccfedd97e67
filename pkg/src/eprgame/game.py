"""Finite extensive-form games with imperfect information.

A :class:`Game` is a plain, immutable data structure: decision nodes grouped
into information sets, leaves carrying one payoff per player.  Chance nodes
and mixed strategies are not modelled.

Node and information-set ids are their positions in ``Game.nodes`` and
``Game.infosets``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

DECISION = "decision"
LEAF = "leaf"


class GameInputError(ValueError):
    """Raised when an operation receives ids that do not belong to the game."""


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    owner: int | None = None
    infoset: int | None = None
    children: tuple[tuple[str, int], ...] = ()
    payoffs: tuple[float, ...] = ()
    label: str = ""

    @property
    def is_leaf(self) -> bool:
        return self.kind == LEAF


@dataclass(frozen=True)
class InformationSet:
    id: int
    owner: int
    action_labels: tuple[str, ...]
    member_nodes: tuple[int, ...]


@dataclass(frozen=True)
class PureStrategy:
    owner: int
    choice: tuple[tuple[int, str], ...]

    def action_at(self, infoset: int) -> str:
        for iset, label in self.choice:
            if iset == infoset:
                return label
        raise KeyError(infoset)

    def as_dict(self) -> dict[int, str]:
        return dict(self.choice)


@dataclass(frozen=True)
class GameStructure:
    """Payoff-free view of a game used by the solvers.

    ``masks[p]`` is a boolean array (n_strategies, n_leaves): entry ``[s, k]``
    tells whether leaf ``leaf_ids[k]`` is consistent with player ``p``'s
    ``s``-th pure strategy.  ``bitsets`` holds the same information as ints.
    """

    player_count: int
    leaf_ids: tuple[int, ...]
    strategies: tuple[tuple[PureStrategy, ...], ...]
    masks: tuple[np.ndarray, ...]
    bitsets: tuple[tuple[int, ...], ...]

    @property
    def leaf_count(self) -> int:
        return len(self.leaf_ids)


@dataclass(frozen=True)
class Game:
    player_count: int
    nodes: tuple[Node, ...]
    root: int
    infosets: tuple[InformationSet, ...]
    player_names: tuple[str, ...] = field(default=())

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    @cached_property
    def parents(self) -> dict[int, tuple[int, str]]:
        out: dict[int, tuple[int, str]] = {}
        for node in self.nodes:
            for label, child in node.children:
                out.setdefault(child, (node.id, label))
        return out

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        """Leaf ids in depth-first, declared-action order from the root."""
        order: list[int] = []
        stack = [self.root]
        seen: set[int] = set()
        while stack:
            nid = stack.pop()
            if nid in seen or not 0 <= nid < len(self.nodes):
                continue
            seen.add(nid)
            node = self.nodes[nid]
            if node.is_leaf:
                order.append(nid)
            else:
                stack.extend(child for _, child in reversed(node.children))
        return tuple(order)

    @cached_property
    def paths(self) -> dict[int, tuple[tuple[int, str], ...]]:
        """Root-to-leaf path of every leaf as (decision node id, action label) edges."""
        out = {}
        for leaf in self.leaves:
            edges = []
            cur = leaf
            while cur != self.root:
                parent, label = self.parents[cur]
                edges.append((parent, label))
                cur = parent
            out[leaf] = tuple(reversed(edges))
        return out

    @cached_property
    def structure(self) -> GameStructure:
        strategies = tuple(
            tuple(enumerate_pure_strategies(self, p)) for p in range(self.player_count)
        )
        leaf_ids = self.leaves
        all_leaves = set(leaf_ids)
        masks, bitsets = [], []
        for p in range(self.player_count):
            m = np.zeros((len(strategies[p]), len(leaf_ids)), dtype=bool)
            bits = []
            for s, strat in enumerate(strategies[p]):
                hit = consistent_outcomes(self, strat, all_leaves)
                word = 0
                for k, leaf in enumerate(leaf_ids):
                    if leaf in hit:
                        m[s, k] = True
                        word |= 1 << k
                bits.append(word)
            m.setflags(write=False)
            masks.append(m)
            bitsets.append(tuple(bits))
        return GameStructure(self.player_count, leaf_ids, strategies, tuple(masks), tuple(bitsets))

    def payoff_matrix(self) -> np.ndarray:
        """Payoffs as an array (players, leaves) in ``leaves`` order."""
        return np.array([self.nodes[z].payoffs for z in self.leaves], dtype=float).T

    def with_payoffs(self, payoffs: np.ndarray | Sequence[Sequence[float]]) -> Game:
        """Return a copy whose leaves carry ``payoffs[p][k]`` for leaf ``leaves[k]``."""
        arr = np.asarray(payoffs, dtype=float)
        if arr.shape != (self.player_count, len(self.leaves)):
            raise GameInputError(
                f"payoff array has shape {arr.shape}, expected {(self.player_count, len(self.leaves))}"
            )
        nodes = list(self.nodes)
        for k, leaf in enumerate(self.leaves):
            nodes[leaf] = replace(nodes[leaf], payoffs=tuple(float(v) for v in arr[:, k]))
        out = replace(self, nodes=tuple(nodes))
        # the tree shape is unchanged, so payoff-free caches carry over
        for name in ("parents", "leaves", "paths", "structure"):
            if name in self.__dict__:
                out.__dict__[name] = self.__dict__[name]
        return out

    def leaf_by_label(self, label: str) -> int:
        for leaf in self.leaves:
            if self.nodes[leaf].label == label:
                return leaf
        raise KeyError(label)


def validate_game(game: Game) -> list[str]:
    """Return a description of every violated well-formedness invariant."""
    problems: list[str] = []
    n = len(game.nodes)
    if not 0 <= game.root < n:
        return [f"root {game.root} is not a node id"]

    parent_count = {i: 0 for i in range(n)}
    for node in game.nodes:
        if node.kind == DECISION:
            if not node.children:
                problems.append(f"node {node.id}: decision node has no children")
            if node.owner is None or not 0 <= node.owner < game.player_count:
                problems.append(f"node {node.id}: owner {node.owner} out of range")
            if node.infoset is None:
                problems.append(f"node {node.id}: decision node has no information set")
            labels = [label for label, _ in node.children]
            if len(set(labels)) != len(labels):
                problems.append(f"node {node.id}: duplicate action labels {labels}")
            for _, child in node.children:
                if not 0 <= child < n:
                    problems.append(f"node {node.id}: child {child} is not a node id")
                else:
                    parent_count[child] += 1
        elif node.kind == LEAF:
            if node.children:
                problems.append(f"node {node.id}: leaf has children")
            if len(node.payoffs) != game.player_count:
                problems.append(
                    f"node {node.id}: leaf has {len(node.payoffs)} payoffs, expected {game.player_count}"
                )
            elif not all(np.isfinite(node.payoffs)):
                problems.append(f"node {node.id}: non-finite payoff {node.payoffs}")
        else:
            problems.append(f"node {node.id}: unknown kind {node.kind!r}")
        if node.id != game.nodes.index(node):
            problems.append(f"node {node.id}: id does not match its position")

    for nid, count in parent_count.items():
        if nid == game.root and count:
            problems.append(f"node {nid}: root has a parent")
        elif nid != game.root and count != 1:
            problems.append(f"node {nid}: has {count} parents, expected 1")

    reachable = _reachable(game)
    for nid in range(n):
        if nid not in reachable:
            problems.append(f"node {nid}: unreachable from root")

    membership: dict[int, list[int]] = {}
    for iset in game.infosets:
        if not iset.member_nodes:
            problems.append(f"infoset {iset.id}: no member nodes")
        for nid in iset.member_nodes:
            membership.setdefault(nid, []).append(iset.id)
            if not 0 <= nid < n:
                problems.append(f"infoset {iset.id}: member {nid} is not a node id")
                continue
            node = game.nodes[nid]
            if node.kind != DECISION:
                problems.append(f"infoset {iset.id}: member {nid} is not a decision node")
                continue
            if node.owner != iset.owner:
                problems.append(
                    f"infoset {iset.id}: member {nid} owned by {node.owner}, infoset owner {iset.owner}"
                )
            labels = tuple(label for label, _ in node.children)
            if labels != iset.action_labels:
                problems.append(
                    f"infoset {iset.id}: member {nid} has actions {labels}, expected {iset.action_labels}"
                )
            if node.infoset != iset.id:
                problems.append(f"infoset {iset.id}: member {nid} points to infoset {node.infoset}")
    for nid, ids in membership.items():
        if len(ids) > 1:
            problems.append(f"node {nid}: belongs to information sets {ids}")
    for node in game.nodes:
        if node.kind == DECISION and node.id not in membership:
            problems.append(f"node {node.id}: decision node in no information set")
    return problems


def _reachable(game: Game) -> set[int]:
    seen: set[int] = set()
    stack = [game.root]
    while stack:
        nid = stack.pop()
        if nid in seen or not 0 <= nid < len(game.nodes):
            continue
        seen.add(nid)
        stack.extend(child for _, child in game.nodes[nid].children)
    return seen


def consistent_outcomes(game: Game, strategy: PureStrategy, remaining: Iterable[int]) -> set[int]:
    """Leaves of ``remaining`` whose path follows ``strategy`` at every node of its owner."""
    remaining = set(remaining)
    leaves = set(game.leaves)
    unknown = remaining - leaves
    if unknown:
        raise GameInputError(f"unknown leaf ids {sorted(unknown)}")
    choice = strategy.as_dict()
    out = set()
    for leaf in remaining:
        for nid, label in game.paths[leaf]:
            node = game.nodes[nid]
            if node.owner == strategy.owner and choice.get(node.infoset) != label:
                break
        else:
            out.add(leaf)
    return out


def enumerate_pure_strategies(game: Game, player: int) -> list[PureStrategy]:
    """All pure strategies of ``player``: infosets by id, actions in declared order."""
    owned = sorted((iset for iset in game.infosets if iset.owner == player), key=lambda i: i.id)
    ids = [iset.id for iset in owned]
    return [
        PureStrategy(player, tuple(zip(ids, combo)))
        for combo in itertools.product(*(iset.action_labels for iset in owned))
    ]
