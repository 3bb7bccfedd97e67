"""Scenario documents and the EPR 2-2-2 outcome subgames.

A scenario is a JSON document; every field is optional.  See
``docs/scenario-schema.md`` for the schema.  Angles are degrees in the
document and radians everywhere else.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Any, NamedTuple

import numpy as np

from .game import DECISION, LEAF, Game, InformationSet, Node
from .pte_soft import DEFAULT_MARGIN, DEFAULT_PRESENCE_SCALE, DEFAULT_ROUNDS, TemperatureSchedule

PARTICLE_A = 0
PARTICLE_B = 1
PLAYER_NAMES = ("ParticleA", "ParticleB")
OUTCOMES = (1, -1)
OUTCOME_LABELS = ("+1", "-1")


class ScenarioError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ScenarioWarning(UserWarning):
    pass


class SettingPair(NamedTuple):
    a: int
    b: int


def setting_pairs() -> list[SettingPair]:
    return [SettingPair(a, b) for a in (0, 1) for b in (0, 1)]


@dataclass(frozen=True)
class StateConfig:
    kind: str = "singlet"
    # rows of complex entries, only for kind == "explicit"
    density_matrix: tuple[tuple[complex, ...], ...] | None = None

    def matrix(self) -> np.ndarray:
        if self.kind == "singlet":
            psi = np.array([0.0, 1.0, -1.0, 0.0]) / math.sqrt(2.0)
            return np.outer(psi, psi).astype(complex)
        return np.array(self.density_matrix, dtype=complex)


@dataclass(frozen=True)
class RewardModelConfig:
    kind: str = "ansatz"
    coupling: float = 0.0
    initial_offset: float = 0.0
    hidden: tuple[int, ...] = (16, 16)
    init_seed: int = 0
    init_scale: float = 0.5


@dataclass(frozen=True)
class HiddenVarConfig:
    distribution: str = "uniform_angle"


@dataclass(frozen=True)
class SolverConfig:
    rounds: int = DEFAULT_ROUNDS
    margin: float = DEFAULT_MARGIN
    presence_scale: float | None = DEFAULT_PRESENCE_SCALE


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float | None = None
    learning_rate_end: float | None = None
    batch_size: int = 1024
    steps: int = 2000
    temperature: TemperatureSchedule = field(
        default_factory=lambda: TemperatureSchedule(0.1, 0.01, 0, "geometric")
    )
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kl_epsilon: float = 1e-9
    checkpoint_interval: int = 0
    block_size: int = 128

    def schedule(self) -> TemperatureSchedule:
        """Temperature schedule; a zero ``total_steps`` means "anneal over all steps"."""
        if self.temperature.total_steps > 0:
            return self.temperature
        return replace(self.temperature, total_steps=self.steps)


@dataclass(frozen=True)
class RunConfig:
    runs: int = 1_000_000
    seed: int = 20240601
    block_size: int = 65536


@dataclass(frozen=True)
class ScenarioConfig:
    alice_angles: tuple[float, float] = (0.0, 90.0)
    bob_angles: tuple[float, float] = (45.0, 135.0)
    state: StateConfig = field(default_factory=StateConfig)
    reward_model: RewardModelConfig = field(default_factory=RewardModelConfig)
    hidden_var: HiddenVarConfig = field(default_factory=HiddenVarConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunConfig = field(default_factory=RunConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    @property
    def alice_radians(self) -> np.ndarray:
        return np.radians(np.array(self.alice_angles, dtype=float))

    @property
    def bob_radians(self) -> np.ndarray:
        return np.radians(np.array(self.bob_angles, dtype=float))

    def angles(self, pair: SettingPair) -> tuple[float, float]:
        return float(self.alice_radians[pair.a]), float(self.bob_radians[pair.b])

    def config_hash(self) -> str:
        return hashlib.sha256(serialize_scenario(self).encode()).hexdigest()[:16]


# -- parsing ----------------------------------------------------------------


def _expect_object(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(path, f"expected an object, got {type(value).__name__}")
    return value


def _check_keys(obj: dict, allowed: set[str], path: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        where = f"{path}." if path else ""
        raise ScenarioError(f"{where}{extra[0]}", "unknown field")


def _number(value: Any, path: str, *, positive=False, nonneg=False, integer=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ScenarioError(path, "must be finite")
    if integer and (not float(value).is_integer()):
        raise ScenarioError(path, f"expected an integer, got {value!r}")
    if positive and value <= 0:
        raise ScenarioError(path, f"must be positive, got {value!r}")
    if nonneg and value < 0:
        raise ScenarioError(path, f"must be nonnegative, got {value!r}")
    return int(value) if integer else float(value)


def _angle_pair(value: Any, path: str) -> tuple[float, float]:
    if not isinstance(value, list) or len(value) != 2:
        raise ScenarioError(path, "expected a list of 2 angles in degrees")
    return (_number(value[0], f"{path}[0]"), _number(value[1], f"{path}[1]"))


def _parse_state(value: Any) -> StateConfig:
    if value == "singlet":
        return StateConfig()
    if isinstance(value, str):
        raise ScenarioError("state", f"unknown state {value!r}; use 'singlet' or a density matrix")
    obj = _expect_object(value, "state")
    _check_keys(obj, {"density_matrix"}, "state")
    if "density_matrix" not in obj:
        raise ScenarioError("state.density_matrix", "missing")
    dm = obj["density_matrix"]
    if isinstance(dm, dict):
        _check_keys(dm, {"real", "imag"}, "state.density_matrix")
        real = _matrix(dm.get("real"), "state.density_matrix.real")
        imag = _matrix(dm.get("imag", [[0.0] * 4] * 4), "state.density_matrix.imag")
    else:
        real = _matrix(dm, "state.density_matrix")
        imag = np.zeros((4, 4))
    rho = real + 1j * imag
    problem = density_matrix_problem(rho, tol=1e-9)
    if problem:
        raise ScenarioError("state", problem)
    return StateConfig("explicit", tuple(tuple(complex(v) for v in row) for row in rho))


def _matrix(value: Any, path: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != 4 or any(not isinstance(r, list) or len(r) != 4 for r in value):
        raise ScenarioError(path, "expected a 4x4 list of numbers")
    return np.array([[_number(v, f"{path}[{i}][{j}]") for j, v in enumerate(row)] for i, row in enumerate(value)])


def density_matrix_problem(rho: np.ndarray, tol: float) -> str | None:
    """Describe why ``rho`` is not a physical two-qubit state, or return None."""
    if rho.shape != (4, 4):
        return f"density matrix must be 4x4, got {rho.shape}"
    if not np.all(np.isfinite(rho)):
        return "density matrix has non-finite entries"
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        return "density matrix is not Hermitian"
    trace = np.trace(rho).real
    if abs(trace - 1.0) > tol:
        return f"density matrix trace is {trace:.12g}, expected 1"
    lowest = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
    if lowest < -tol:
        return f"density matrix is not positive semidefinite (eigenvalue {lowest:.3g})"
    return None


def _parse_reward_model(value: Any) -> RewardModelConfig:
    if isinstance(value, str):
        value = {"kind": value}
    obj = _expect_object(value, "reward_model")
    _check_keys(obj, {"kind", "coupling", "initial_offset", "hidden", "init_seed", "init_scale"}, "reward_model")
    kind = obj.get("kind", "ansatz")
    if kind not in ("ansatz", "mlp"):
        raise ScenarioError("reward_model.kind", f"unknown reward model {kind!r}")
    out = RewardModelConfig(kind=kind)
    if "coupling" in obj:
        out = replace(out, coupling=_number(obj["coupling"], "reward_model.coupling"))
    if "initial_offset" in obj:
        out = replace(out, initial_offset=_number(obj["initial_offset"], "reward_model.initial_offset"))
    if "hidden" in obj:
        hidden = obj["hidden"]
        if not isinstance(hidden, list) or not hidden:
            raise ScenarioError("reward_model.hidden", "expected a nonempty list of layer widths")
        widths = tuple(
            _number(h, f"reward_model.hidden[{i}]", positive=True, integer=True) for i, h in enumerate(hidden)
        )
        out = replace(out, hidden=widths)
    if "init_seed" in obj:
        out = replace(out, init_seed=_number(obj["init_seed"], "reward_model.init_seed", nonneg=True, integer=True))
    if "init_scale" in obj:
        out = replace(out, init_scale=_number(obj["init_scale"], "reward_model.init_scale", nonneg=True))
    return out


def _parse_hidden_var(value: Any) -> HiddenVarConfig:
    if isinstance(value, str):
        value = {"distribution": value}
    obj = _expect_object(value, "hidden_var")
    _check_keys(obj, {"distribution"}, "hidden_var")
    dist = obj.get("distribution", "uniform_angle")
    if dist == "sphere":
        raise ScenarioError("hidden_var.distribution", "'sphere' is reserved and not implemented")
    if dist != "uniform_angle":
        raise ScenarioError("hidden_var.distribution", f"unknown distribution {dist!r}")
    return HiddenVarConfig(dist)


def _parse_schedule(value: Any) -> TemperatureSchedule:
    obj = _expect_object(value, "train.temperature")
    _check_keys(obj, {"start", "end", "total_steps", "shape"}, "train.temperature")
    base = TrainConfig().temperature
    start = _number(obj.get("start", base.start), "train.temperature.start", positive=True)
    end = _number(obj.get("end", base.end), "train.temperature.end", positive=True)
    if end > start:
        raise ScenarioError("train.temperature", "start must be >= end")
    total = _number(obj.get("total_steps", base.total_steps), "train.temperature.total_steps", nonneg=True, integer=True)
    shape = obj.get("shape", base.shape)
    if shape not in ("geometric", "linear"):
        raise ScenarioError("train.temperature.shape", f"unknown shape {shape!r}")
    return TemperatureSchedule(start, end, total, shape)


def _parse_train(value: Any) -> TrainConfig:
    obj = _expect_object(value, "train")
    fields = {
        "learning_rate": dict(positive=True),
        "learning_rate_end": dict(positive=True),
        "batch_size": dict(positive=True, integer=True),
        "steps": dict(nonneg=True, integer=True),
        "seed": dict(nonneg=True, integer=True),
        "beta1": dict(nonneg=True),
        "beta2": dict(nonneg=True),
        "eps": dict(positive=True),
        "kl_epsilon": dict(positive=True),
        "checkpoint_interval": dict(nonneg=True, integer=True),
        "block_size": dict(positive=True, integer=True),
    }
    _check_keys(obj, set(fields) | {"temperature", "optimizer"}, "train")
    kwargs: dict[str, Any] = {}
    for name, opts in fields.items():
        if name in obj and not (obj[name] is None and name.startswith("learning_rate")):
            kwargs[name] = _number(obj[name], f"train.{name}", **opts)
    for name in ("beta1", "beta2"):
        if name in kwargs and kwargs[name] >= 1:
            raise ScenarioError(f"train.{name}", "must be < 1")
    if "temperature" in obj:
        kwargs["temperature"] = _parse_schedule(obj["temperature"])
    if "optimizer" in obj:
        if obj["optimizer"] not in ("adam", "sgd"):
            raise ScenarioError("train.optimizer", f"unknown optimizer {obj['optimizer']!r}")
        kwargs["optimizer"] = obj["optimizer"]
    return TrainConfig(**kwargs)


def _parse_run(value: Any) -> RunConfig:
    obj = _expect_object(value, "run")
    _check_keys(obj, {"runs", "seed", "block_size"}, "run")
    kwargs = {}
    if "runs" in obj:
        kwargs["runs"] = _number(obj["runs"], "run.runs", positive=True, integer=True)
    if "seed" in obj:
        kwargs["seed"] = _number(obj["seed"], "run.seed", nonneg=True, integer=True)
    if "block_size" in obj:
        kwargs["block_size"] = _number(obj["block_size"], "run.block_size", positive=True, integer=True)
    return RunConfig(**kwargs)


def _parse_solver(value: Any) -> SolverConfig:
    obj = _expect_object(value, "solver")
    _check_keys(obj, {"rounds", "margin", "presence_scale"}, "solver")
    kwargs: dict[str, Any] = {}
    if "rounds" in obj:
        kwargs["rounds"] = _number(obj["rounds"], "solver.rounds", positive=True, integer=True)
    if "margin" in obj:
        kwargs["margin"] = _number(obj["margin"], "solver.margin", nonneg=True)
    if "presence_scale" in obj:
        ps = obj["presence_scale"]
        kwargs["presence_scale"] = None if ps is None else _number(ps, "solver.presence_scale", positive=True)
    return SolverConfig(**kwargs)


_TOP_LEVEL = {"alice_angles", "bob_angles", "state", "reward_model", "hidden_var", "train", "run", "solver"}


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse a JSON scenario document; missing fields take their defaults."""
    if text.strip():
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError("", f"malformed JSON: {exc}") from None
    else:
        doc = {}
    doc = _expect_object(doc, "")
    _check_keys(doc, _TOP_LEVEL, "")
    config = ScenarioConfig()
    if "alice_angles" in doc:
        config = replace(config, alice_angles=_angle_pair(doc["alice_angles"], "alice_angles"))
    if "bob_angles" in doc:
        config = replace(config, bob_angles=_angle_pair(doc["bob_angles"], "bob_angles"))
    if "state" in doc:
        config = replace(config, state=_parse_state(doc["state"]))
    if "reward_model" in doc:
        config = replace(config, reward_model=_parse_reward_model(doc["reward_model"]))
    if "hidden_var" in doc:
        config = replace(config, hidden_var=_parse_hidden_var(doc["hidden_var"]))
    if "train" in doc:
        config = replace(config, train=_parse_train(doc["train"]))
    if "run" in doc:
        config = replace(config, run=_parse_run(doc["run"]))
    if "solver" in doc:
        config = replace(config, solver=_parse_solver(doc["solver"]))
    for who in ("alice_angles", "bob_angles"):
        first, second = getattr(config, who)
        if math.isclose(first % 180.0, second % 180.0, abs_tol=1e-12) or math.isclose(
            abs(first - second) % 180.0, 180.0, abs_tol=1e-12
        ):
            warnings.warn(f"{who} {first}, {second} select the same measurement axis", ScenarioWarning, stacklevel=2)
    return config


def load_scenario(path: str | None) -> ScenarioConfig:
    """Read a scenario file; ``None`` or ``"default"`` gives the defaults."""
    if path is None or path == "default":
        return ScenarioConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def scenario_to_dict(config: ScenarioConfig) -> dict:
    doc = asdict(config)
    doc["alice_angles"] = list(config.alice_angles)
    doc["bob_angles"] = list(config.bob_angles)
    if config.state.kind == "singlet":
        doc["state"] = "singlet"
    else:
        rho = config.state.matrix()
        doc["state"] = {"density_matrix": {"real": rho.real.tolist(), "imag": rho.imag.tolist()}}
    doc["reward_model"]["hidden"] = list(config.reward_model.hidden)
    return doc


def serialize_scenario(config: ScenarioConfig) -> str:
    return json.dumps(scenario_to_dict(config), indent=2, sort_keys=True)


# -- EPR outcome subgame ----------------------------------------------------


def build_outcome_subgame(config: ScenarioConfig, pair: SettingPair, mirrored: bool = False) -> Game:
    """Outcome subgame for one forced setting pair.

    ParticleA moves at the root, ParticleB below it in a single information
    set (B does not observe A's outcome).  ``mirrored`` swaps the move order.
    Leaves are labelled "x,y" and carry zero payoffs until a reward model
    fills them.  ``config`` and ``pair`` do not change the tree, only the
    payoffs a reward model will later attach.
    """
    first, second = (PARTICLE_B, PARTICLE_A) if mirrored else (PARTICLE_A, PARTICLE_B)
    nodes: list[Node] = [
        Node(0, DECISION, owner=first, infoset=0, children=(("+1", 1), ("-1", 2))),
        Node(1, DECISION, owner=second, infoset=1, children=(("+1", 3), ("-1", 4))),
        Node(2, DECISION, owner=second, infoset=1, children=(("+1", 5), ("-1", 6))),
    ]
    for nid, (o1, o2) in zip(range(3, 7), [(1, 1), (1, -1), (-1, 1), (-1, -1)]):
        x, y = (o2, o1) if mirrored else (o1, o2)
        nodes.append(Node(nid, LEAF, payoffs=(0.0, 0.0), label=f"{x:+d},{y:+d}"))
    infosets = (
        InformationSet(0, first, ("+1", "-1"), (0,)),
        InformationSet(1, second, ("+1", "-1"), (1, 2)),
    )
    return Game(2, tuple(nodes), 0, infosets, PLAYER_NAMES)


def leaf_outcomes(game: Game) -> list[tuple[int, int]]:
    """(x, y) of every leaf in ``game.leaves`` order, parsed from the leaf labels."""
    out = []
    for leaf in game.leaves:
        x, y = game.nodes[leaf].label.split(",")
        out.append((int(x), int(y)))
    return out
