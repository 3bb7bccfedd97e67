"""Parameterised reward functions for the two particle players.

Two learnable families fill the leaf payoffs of every outcome subgame from
(hidden variable, setting pair, outcomes, parameters):

``ansatz``
    Bell's rotated-axis construction with one learnable offset ``delta``.
    Each particle is rewarded for aligning (A) or anti-aligning (B) its
    outcome with an effective measurement axis; the two effective axes are
    pulled toward each other's nearest axis by ``delta / 2``::

        s   = sin(2 (theta_a - theta_b))
        a'  = theta_a - delta/2 * s          b' = theta_b + delta/2 * s
        u_A = x cos(lam - a') + c x y cos(lam - (theta_a + theta_b)/2)
        u_B = -y cos(lam - b') + c x y cos(lam - (theta_a + theta_b)/2)

    The coupling ``c`` is a fixed constant (default 0).
``mlp``
    A tanh network on (cos lam, sin lam, onehot a, onehot b, x, y) with one
    linear output per player.

Payoff batches have shape (n_lambda, 4 setting pairs, 2 players, 4 leaves)
with leaves ordered (+1,+1), (+1,-1), (-1,+1), (-1,-1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .scenario import OUTCOMES, RewardModelConfig, ScenarioConfig, SettingPair, setting_pairs

LEAF_XY = np.array([(x, y) for x in OUTCOMES for y in OUTCOMES], dtype=float)
N_FEATURES = 8
CHECKPOINT_MAGIC = "# eprgame checkpoint"
CHECKPOINT_FORMAT = 1


class RewardConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "values", v)
        if v.size != sum(_size(shape) for _, shape in self.layout):
            raise RewardConfigError(f"{v.size} values do not fill layout {self.layout}")
        if not np.all(np.isfinite(v)):
            raise RewardConfigError("parameter vector has non-finite entries")

    def __len__(self) -> int:
        return self.values.size

    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, shape in self.layout:
            out[name] = slice(start, start + _size(shape))
            start += _size(shape)
        return out

    def get(self, name: str) -> np.ndarray:
        shape = dict(self.layout)
        if name not in shape:
            raise RewardConfigError(f"parameter slice {name!r} missing")
        return self.values[self.slices()[name]].reshape(shape[name])

    def replaced(self, values) -> ParamVector:
        return ParamVector(np.asarray(values, dtype=float), self.layout)

    def __eq__(self, other):
        return (
            isinstance(other, ParamVector)
            and self.layout == other.layout
            and np.array_equal(self.values, other.values)
        )


def _size(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape, dtype=int)) if shape else 1


@dataclass(frozen=True)
class HiddenVariable:
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.lam < 2 * math.pi:
            raise ValueError(f"hidden variable {self.lam} outside [0, 2pi)")


# -- counter-based hidden-variable stream -----------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def sample_hidden_batch(seed: int, start: int, count: int) -> np.ndarray:
    """Hidden variables for indices ``start .. start+count-1`` of stream ``seed``.

    Each value is a SplitMix64 hash of (seed, index), so any index can be
    generated independently of the others and of the worker layout.
    """
    key = _mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) + _GOLDEN)
    idx = np.arange(start, start + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix64(key + (idx + np.uint64(1)) * _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * (2.0 * math.pi / 2.0**53)


def sample_hidden(seed: int, index: int) -> HiddenVariable:
    return HiddenVariable(float(sample_hidden_batch(seed, index, 1)[0]))


# -- models -----------------------------------------------------------------


@dataclass(frozen=True)
class RewardModel:
    kind: str
    config: RewardModelConfig
    params: ParamVector
    # fixed +/-1 outcome assignment for the "local" baseline kind
    assignment: tuple[int, int, int, int] = field(default=(1, 1, 1, 1))

    def with_params(self, values) -> RewardModel:
        return RewardModel(self.kind, self.config, self.params.replaced(values), self.assignment)

    @property
    def architecture(self) -> dict[str, Any]:
        if self.kind == "ansatz":
            return {"coupling": self.config.coupling}
        if self.kind == "mlp":
            return {"hidden": list(self.config.hidden)}
        return {"assignment": list(self.assignment)}


def mlp_layout(hidden: tuple[int, ...]) -> tuple[tuple[str, tuple[int, ...]], ...]:
    sizes = (N_FEATURES, *hidden, 2)
    layout = []
    for i in range(len(sizes) - 1):
        layout.append((f"layer{i}.weight", (sizes[i + 1], sizes[i])))
        layout.append((f"layer{i}.bias", (sizes[i + 1],)))
    return tuple(layout)


def make_model(config: RewardModelConfig) -> RewardModel:
    if config.kind == "ansatz":
        return RewardModel("ansatz", config, ParamVector([config.initial_offset], (("offset", (1,)),)))
    if config.kind == "mlp":
        layout = mlp_layout(config.hidden)
        rng = np.random.default_rng(config.init_seed)
        chunks = []
        for name, shape in layout:
            if name.endswith("weight"):
                chunks.append(rng.standard_normal(shape).ravel() * config.init_scale / math.sqrt(shape[1]))
            else:
                chunks.append(np.zeros(_size(shape)))
        return RewardModel("mlp", config, ParamVector(np.concatenate(chunks), layout))
    raise RewardConfigError(f"unknown reward model kind {config.kind!r}")


def local_assignment_model(a0: int, a1: int, b0: int, b1: int) -> RewardModel:
    """Baseline whose payoffs make a fixed, setting-local outcome dominant.

    ParticleA is paid ``x * A(a)`` and ParticleB ``y * B(b)``, independent of
    the hidden variable.
    """
    for v in (a0, a1, b0, b1):
        if v not in (1, -1):
            raise RewardConfigError("local assignments must be +1 or -1")
    return RewardModel("local", RewardModelConfig(kind="local"), ParamVector([], ()), (a0, a1, b0, b1))


def _pair_angles(config: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    pairs = setting_pairs()
    ta = np.array([config.alice_radians[p.a] for p in pairs])
    tb = np.array([config.bob_radians[p.b] for p in pairs])
    return ta, tb


@dataclass
class PayoffCache:
    kind: str
    data: dict


def payoffs_batch(model: RewardModel, lambdas: np.ndarray, config: ScenarioConfig, with_cache: bool = False):
    """Payoffs (n, 4, 2, 4) for every hidden variable, setting pair and leaf."""
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    x, y = LEAF_XY[:, 0], LEAF_XY[:, 1]
    if model.kind == "ansatz":
        delta = float(model.params.get("offset")[0])
        c = model.config.coupling
        ta, tb = _pair_angles(config)
        s2 = np.sin(2 * (ta - tb))
        eff_a = ta - 0.5 * delta * s2
        eff_b = tb + 0.5 * delta * s2
        L = lam[:, None]
        da, db = L - eff_a, L - eff_b
        joint = c * np.cos(L - 0.5 * (ta + tb))
        ua = x * np.cos(da)[..., None] + (x * y) * joint[..., None]
        ub = -y * np.cos(db)[..., None] + (x * y) * joint[..., None]
        U = np.stack([ua, ub], axis=2)
        cache = PayoffCache("ansatz", {"da": da, "db": db, "s2": s2})
    elif model.kind == "mlp":
        feats = mlp_features(lam)
        out, acts = mlp_forward(model.params, feats.reshape(-1, N_FEATURES))
        U = out.reshape(lam.size, 4, 4, 2).transpose(0, 1, 3, 2)
        cache = PayoffCache("mlp", {"acts": acts})
    elif model.kind == "local":
        a0, a1, b0, b1 = model.assignment
        A = np.array([[a0, a1][p.a] for p in setting_pairs()], dtype=float)
        B = np.array([[b0, b1][p.b] for p in setting_pairs()], dtype=float)
        ua = np.broadcast_to(A[:, None] * x, (lam.size, 4, 4))
        ub = np.broadcast_to(B[:, None] * y, (lam.size, 4, 4))
        U = np.stack([ua, ub], axis=2)
        cache = PayoffCache("local", {})
    else:
        raise RewardConfigError(f"unknown reward model kind {model.kind!r}")
    return (U, cache) if with_cache else U


def payoffs_vjp(model: RewardModel, cache: PayoffCache, g_U: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(g_U * U)`` with respect to the flat parameter vector."""
    x, y = LEAF_XY[:, 0], LEAF_XY[:, 1]
    if model.kind == "ansatz":
        da, db, s2 = cache.data["da"], cache.data["db"], cache.data["s2"]
        # d u_A / d delta = -(s2/2) x sin(da);  d u_B / d delta = -(s2/2) y sin(db)
        dua = -0.5 * s2 * np.sin(da)
        dub = -0.5 * s2 * np.sin(db)
        g = (g_U[:, :, 0, :] * x).sum(axis=2) * dua + (g_U[:, :, 1, :] * y).sum(axis=2) * dub
        return np.array([g.sum()])
    if model.kind == "mlp":
        g_out = g_U.transpose(0, 1, 3, 2).reshape(-1, 2)
        return mlp_backward(model.params, cache.data["acts"], g_out)
    return np.zeros(0)


def ansatz_payoffs(lam: float, config: ScenarioConfig, pair: SettingPair, x: int, y: int, params: ParamVector) -> np.ndarray:
    model = RewardModel("ansatz", _ansatz_cfg(config), params)
    return _single(model, lam, config, pair, x, y)


def _ansatz_cfg(config: ScenarioConfig) -> RewardModelConfig:
    cfg = config.reward_model
    return cfg if cfg.kind == "ansatz" else RewardModelConfig(kind="ansatz")


def mlp_payoffs(lam: float, config: ScenarioConfig, pair: SettingPair, x: int, y: int, params: ParamVector) -> np.ndarray:
    feats = _features(np.array([_lam(lam)]), np.array([pair.a]), np.array([pair.b]), np.array([x]), np.array([y]))
    out, _ = mlp_forward(params, feats)
    return out[0]


def _leaf_position(x: int, y: int) -> int:
    return (0 if x == 1 else 2) + (0 if y == 1 else 1)


def _lam(lam) -> float:
    return lam.lam if isinstance(lam, HiddenVariable) else float(lam)


def _single(model: RewardModel, lam, config: ScenarioConfig, pair: SettingPair, x: int, y: int) -> np.ndarray:
    U = payoffs_batch(model, np.array([_lam(lam)]), config)
    return U[0, pair.a * 2 + pair.b, :, _leaf_position(x, y)].copy()


def model_payoffs(model: RewardModel, lam: float, config: ScenarioConfig, pair: SettingPair, x: int, y: int) -> np.ndarray:
    return _single(model, lam, config, pair, x, y)


def payoff_gradient(model: RewardModel, lam: float, config: ScenarioConfig, pair: SettingPair, x: int, y: int) -> np.ndarray:
    """Jacobian (players x params) of the payoff vector at one leaf."""
    U, cache = payoffs_batch(model, np.array([_lam(lam)]), config, with_cache=True)
    rows = []
    for p in range(2):
        g = np.zeros_like(U)
        g[0, pair.a * 2 + pair.b, p, _leaf_position(x, y)] = 1.0
        rows.append(payoffs_vjp(model, cache, g))
    return np.array(rows)


# -- the network ------------------------------------------------------------


def _features(lam, a, b, x, y) -> np.ndarray:
    f = np.zeros((lam.size, N_FEATURES))
    f[:, 0] = np.cos(lam)
    f[:, 1] = np.sin(lam)
    f[np.arange(lam.size), 2 + a] = 1.0
    f[np.arange(lam.size), 4 + b] = 1.0
    f[:, 6] = x
    f[:, 7] = y
    return f


def mlp_features(lambdas: np.ndarray) -> np.ndarray:
    """Feature tensor (n, 4 pairs, 4 leaves, 8)."""
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    n = lam.size
    pairs = setting_pairs()
    L = np.repeat(lam, 16)
    a = np.tile(np.repeat([p.a for p in pairs], 4), n)
    b = np.tile(np.repeat([p.b for p in pairs], 4), n)
    x = np.tile(LEAF_XY[:, 0], 4 * n)
    y = np.tile(LEAF_XY[:, 1], 4 * n)
    return _features(L, a, b, x, y).reshape(n, 4, 4, N_FEATURES)


def _layers(params: ParamVector):
    n_layers = len(params.layout) // 2
    return [(params.get(f"layer{i}.weight"), params.get(f"layer{i}.bias")) for i in range(n_layers)]


def mlp_forward(params: ParamVector, feats: np.ndarray):
    h = feats
    acts = [h]
    layers = _layers(params)
    if layers and layers[0][0].shape[1] != feats.shape[1]:
        raise RewardConfigError(f"first layer expects {layers[0][0].shape[1]} features, got {feats.shape[1]}")
    for i, (W, bias) in enumerate(layers):
        h = h @ W.T + bias
        if i < len(layers) - 1:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_backward(params: ParamVector, acts: list[np.ndarray], g_out: np.ndarray) -> np.ndarray:
    layers = _layers(params)
    grads: dict[str, np.ndarray] = {}
    g = g_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        if i < len(layers) - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        grads[f"layer{i}.weight"] = g.T @ acts[i]
        grads[f"layer{i}.bias"] = g.sum(axis=0)
        g = g @ W
    return np.concatenate([grads[name].ravel() for name, _ in params.layout])


# -- checkpoints ------------------------------------------------------------


def write_checkpoint(path, model: RewardModel, extra_header: dict[str, Any] | None = None,
                     extra_sections: dict[str, np.ndarray] | None = None) -> None:
    """Plain-text checkpoint, one hexadecimal float per line.

    Header lines start with ``#``; each slice starts with ``[name] shape``.
    """
    lines = [
        CHECKPOINT_MAGIC,
        f"# format: {CHECKPOINT_FORMAT}",
        f"# kind: {model.kind}",
        f"# architecture: {json.dumps(model.architecture, sort_keys=True)}",
    ]
    for key, value in (extra_header or {}).items():
        lines.append(f"# {key}: {json.dumps(value)}")
    sections = [(name, model.params.get(name)) for name, _ in model.params.layout]
    sections += [(name, np.asarray(v, dtype=float)) for name, v in (extra_sections or {}).items()]
    for name, arr in sections:
        shape = "x".join(str(d) for d in arr.shape) if arr.ndim else "1"
        lines.append(f"[{name}] {shape}")
        lines.extend(float(v).hex() for v in np.asarray(arr).ravel())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path) -> tuple[RewardModel, dict[str, Any], dict[str, np.ndarray]]:
    """Inverse of :func:`write_checkpoint`: (model, header fields, extra sections)."""
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    header: dict[str, Any] = {}
    sections: dict[str, np.ndarray] = {}
    order: list[str] = []
    i = 1
    while i < len(raw):
        line = raw[i]
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            header[key] = json.loads(value) if key not in ("kind",) else value
            i += 1
        elif line.startswith("["):
            name, _, shape_txt = line[1:].partition("] ")
            shape = tuple(int(d) for d in shape_txt.split("x")) if shape_txt != "1" else ()
            n = _size(shape)
            try:
                values = [float.fromhex(v) for v in raw[i + 1 : i + 1 + n]]
            except ValueError as exc:
                raise CheckpointError(f"{path}: bad value in slice {name}: {exc}") from None
            if len(values) != n:
                raise CheckpointError(f"{path}: slice {name} truncated")
            sections[name] = np.array(values).reshape(shape) if shape else np.array(values)
            order.append(name)
            i += 1 + n
        elif not line.strip():
            i += 1
        else:
            raise CheckpointError(f"{path}: unexpected line {i + 1}: {line!r}")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')!r}")
    kind = header.get("kind")
    arch = header.get("architecture", {})
    if kind == "ansatz":
        cfg = RewardModelConfig(kind="ansatz", coupling=float(arch.get("coupling", 0.0)))
        layout = (("offset", (1,)),)
        assignment = (1, 1, 1, 1)
    elif kind == "mlp":
        cfg = RewardModelConfig(kind="mlp", hidden=tuple(arch["hidden"]))
        layout = mlp_layout(cfg.hidden)
        assignment = (1, 1, 1, 1)
    elif kind == "local":
        cfg = RewardModelConfig(kind="local")
        layout = ()
        assignment = tuple(arch["assignment"])
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    try:
        values = np.concatenate([sections.pop(name).ravel() for name, _ in layout]) if layout else np.zeros(0)
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing parameter slice {exc}") from None
    model = RewardModel(kind, cfg, ParamVector(values, layout), assignment)
    for key in ("format", "kind", "architecture"):
        header.pop(key, None)
    return model, header, sections
