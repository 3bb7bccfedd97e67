from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eprgame.game import (
    DECISION,
    LEAF,
    Game,
    GameInputError,
    InformationSet,
    Node,
    consistent_outcomes,
    enumerate_pure_strategies,
    validate_game,
)


def two_leaf_game(payoffs=((3.0,), (5.0,))) -> Game:
    nodes = (
        Node(0, DECISION, owner=0, infoset=0, children=(("L", 1), ("R", 2))),
        Node(1, LEAF, payoffs=tuple(payoffs[0])),
        Node(2, LEAF, payoffs=tuple(payoffs[1])),
    )
    return Game(1, nodes, 0, (InformationSet(0, 0, ("L", "R"), (0,)),))


def random_tree(draw_actions, n_players: int = 2) -> Game:
    """Depth-2 tree; player 1 moves below player 0 without observing its action."""
    top, bottom = draw_actions
    nodes = [Node(0, DECISION, owner=0, infoset=0, children=tuple((f"a{i}", 1 + i) for i in range(top)))]
    next_id = 1 + top
    leaves = []
    for i in range(top):
        kids = tuple((f"b{j}", next_id + j) for j in range(bottom))
        nodes.append(Node(1 + i, DECISION, owner=1, infoset=1, children=kids))
        leaves.extend(range(next_id, next_id + bottom))
        next_id += bottom
    for lid in leaves:
        nodes.append(Node(lid, LEAF, payoffs=(0.0,) * n_players))
    infosets = (
        InformationSet(0, 0, tuple(f"a{i}" for i in range(top)), (0,)),
        InformationSet(1, 1, tuple(f"b{j}" for j in range(bottom)), tuple(range(1, 1 + top))),
    )
    return Game(n_players, tuple(nodes), 0, infosets)


def test_validate_minimal_game():
    assert validate_game(two_leaf_game()) == []


def test_validate_arity_violation():
    game = two_leaf_game(((1.0, 2.0, 3.0), (5.0,)))
    problems = validate_game(game)
    assert len(problems) == 1
    assert "payoffs" in problems[0]


def test_validate_infoset_label_violation():
    nodes = (
        Node(0, DECISION, owner=0, infoset=0, children=(("L", 1), ("R", 2))),
        Node(1, DECISION, owner=1, infoset=1, children=(("u", 3), ("d", 4))),
        Node(2, DECISION, owner=1, infoset=1, children=(("up", 5), ("d", 6))),
        *(Node(i, LEAF, payoffs=(0.0, 0.0)) for i in range(3, 7)),
    )
    infosets = (InformationSet(0, 0, ("L", "R"), (0,)), InformationSet(1, 1, ("u", "d"), (1, 2)))
    problems = validate_game(Game(2, nodes, 0, infosets))
    assert len(problems) == 1
    assert "actions" in problems[0]


def test_validate_detects_cycle_and_two_parents():
    nodes = (
        Node(0, DECISION, owner=0, infoset=0, children=(("L", 1), ("R", 1))),
        Node(1, LEAF, payoffs=(0.0,)),
    )
    problems = validate_game(Game(1, nodes, 0, (InformationSet(0, 0, ("L", "R"), (0,)),)))
    assert any("parents" in p for p in problems)


def test_consistent_outcomes_single_player():
    game = two_leaf_game()
    left = next(s for s in enumerate_pure_strategies(game, 0) if s.action_at(0) == "L")
    assert consistent_outcomes(game, left, game.leaves) == {1}


def test_consistent_outcomes_vacuous_player():
    game = two_leaf_game()
    nobody = enumerate_pure_strategies(game, 1)
    assert len(nobody) == 1 and nobody[0].choice == ()
    assert consistent_outcomes(game, nobody[0], game.leaves) == set(game.leaves)


def test_consistent_outcomes_epr_subgame(subgame):
    plus = next(s for s in enumerate_pure_strategies(subgame, 0) if s.action_at(0) == "+1")
    got = consistent_outcomes(subgame, plus, subgame.leaves)
    assert {subgame.nodes[z].label for z in got} == {"+1,+1", "+1,-1"}


def test_consistent_outcomes_unknown_leaf(subgame):
    s = enumerate_pure_strategies(subgame, 0)[0]
    with pytest.raises(GameInputError):
        consistent_outcomes(subgame, s, [0])


def test_strategy_counts():
    assert len(enumerate_pure_strategies(two_leaf_game(), 0)) == 2
    nodes = (
        Node(0, DECISION, owner=0, infoset=0, children=(("L", 1), ("R", 2))),
        Node(1, DECISION, owner=0, infoset=1, children=(("l", 3), ("r", 4))),
        Node(2, LEAF, payoffs=(0.0,)),
        Node(3, LEAF, payoffs=(0.0,)),
        Node(4, LEAF, payoffs=(0.0,)),
    )
    infosets = (InformationSet(0, 0, ("L", "R"), (0,)), InformationSet(1, 0, ("l", "r"), (1,)))
    game = Game(1, nodes, 0, infosets)
    assert validate_game(game) == []
    strategies = enumerate_pure_strategies(game, 0)
    assert [s.choice for s in strategies] == [
        ((0, "L"), (1, "l")),
        ((0, "L"), (1, "r")),
        ((0, "R"), (1, "l")),
        ((0, "R"), (1, "r")),
    ]


def test_declared_order_not_alphabetical():
    nodes = (
        Node(0, DECISION, owner=0, infoset=0, children=(("zeta", 1), ("alpha", 2))),
        Node(1, LEAF, payoffs=(0.0,)),
        Node(2, LEAF, payoffs=(1.0,)),
    )
    game = Game(1, nodes, 0, (InformationSet(0, 0, ("zeta", "alpha"), (0,)),))
    assert [s.action_at(0) for s in enumerate_pure_strategies(game, 0)] == ["zeta", "alpha"]


def test_with_payoffs_shape_check(subgame):
    with pytest.raises(GameInputError):
        subgame.with_payoffs([[1, 2, 3], [1, 2, 3]])


shapes = st.tuples(st.integers(1, 3), st.integers(1, 3))


@given(shapes)
def test_strategies_cover_all_leaves(shape):
    game = random_tree(shape)
    assert validate_game(game) == []
    for player in (0, 1):
        strategies = enumerate_pure_strategies(game, player)
        assert len(strategies) == math.prod(len(i.action_labels) for i in game.infosets if i.owner == player)
        union = set().union(*(consistent_outcomes(game, s, game.leaves) for s in strategies))
        assert union == set(game.leaves)
        assert enumerate_pure_strategies(game, player) == strategies


@settings(max_examples=50)
@given(shapes, st.data())
def test_consistent_outcomes_monotone(shape, data):
    game = random_tree(shape)
    leaves = list(game.leaves)
    big = set(data.draw(st.sets(st.sampled_from(leaves))))
    small = {z for z in big if data.draw(st.booleans())}
    for player in (0, 1):
        for s in enumerate_pure_strategies(game, player):
            assert consistent_outcomes(game, s, small) <= consistent_outcomes(game, s, big)


def test_leaf_order_is_depth_first(subgame):
    assert [subgame.nodes[z].label for z in subgame.leaves] == ["+1,+1", "+1,-1", "-1,+1", "-1,-1"]
    assert list(subgame.leaves) == [3, 4, 5, 6]
