"""Reward learning: fit model parameters so the soft-solver histogram matches the Born target.

The loss is KL(model || target) on the smoothed soft-solver histogram,
minimised with Adam (or plain SGD).  Batches of hidden variables are read
from the counter-based stream, so a run is fully determined by its scenario.
Per-sample work is split into fixed-size blocks whose results are combined by
a fixed pairwise tree, which makes the result independent of the number of
workers.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .pte_soft import SoftSolver, anneal_temperature
from .quantum import TargetDistribution, target_histogram
from .rewards import (
    RewardModel,
    make_model,
    payoffs_batch,
    payoffs_vjp,
    read_checkpoint,
    sample_hidden_batch,
    write_checkpoint,
)
from .scenario import ScenarioConfig, build_outcome_subgame, setting_pairs

log = logging.getLogger(__name__)

DEFAULT_LR = {"ansatz": 0.05, "mlp": 0.003}
LR_DECAY = 0.01


class NumericError(ArithmeticError):
    pass


@dataclass
class TrainState:
    params: np.ndarray
    step: int
    temperature: float
    m: np.ndarray
    v: np.ndarray
    rng_seed: int
    next_index: int
    loss_history: list[tuple[int, float, float]] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)


@dataclass
class ExpectedHistogram:
    cells: np.ndarray
    floor_count: int
    pullback: Callable[[np.ndarray], np.ndarray]


def tree_sum(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise sum in a fixed order: ((p0+p1)+(p2+p3))+..."""
    level = list(parts)
    if not level:
        raise ValueError("nothing to sum")
    while len(level) > 1:
        nxt = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _solver(config: ScenarioConfig, tau: float) -> SoftSolver:
    structure = build_outcome_subgame(config, setting_pairs()[0]).structure
    s = config.solver
    return SoftSolver(structure, tau, s.rounds, s.margin, s.presence_scale)


def expected_histogram(
    model: RewardModel,
    config: ScenarioConfig,
    tau: float,
    lambdas: np.ndarray,
    workers: int = 1,
    block_size: int | None = None,
) -> ExpectedHistogram:
    """Soft-solver histogram over (a, b, x, y) averaged over ``lambdas``.

    Each setting pair carries weight 1/4.  ``pullback(g)`` maps a gradient
    with respect to the 16 cells to a gradient with respect to the parameters.
    """
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    if lam.size == 0:
        raise ValueError("expected_histogram needs at least one hidden variable")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    block = block_size or config.train.block_size
    solver = _solver(config, tau)
    scale = 1.0 / (4.0 * lam.size)
    chunks = [lam[i : i + block] for i in range(0, lam.size, block)]

    def forward(chunk):
        U, pcache = payoffs_batch(model, chunk, config, with_cache=True)
        tape = solver.forward(U.reshape(-1, 2, 4))
        cells = tape.distribution.reshape(chunk.size, 16).sum(axis=0) * scale
        return cells, int(tape.floor_hit.sum()), (chunk.size, pcache, tape)

    results = _map(forward, chunks, workers)
    cells = tree_sum([r[0] for r in results])
    floors = sum(r[1] for r in results)

    def pullback(g_cells: np.ndarray) -> np.ndarray:
        g = np.asarray(g_cells, dtype=float).reshape(1, 16) * scale

        def backward(record):
            n, pcache, tape = record
            g_dist = np.broadcast_to(g, (n, 16)).reshape(n * 4, 4)
            g_U = solver.backward(tape, g_dist).reshape(n, 4, 2, 4)
            return payoffs_vjp(model, pcache, g_U)

        return tree_sum(_map(backward, [r[2] for r in results], workers))

    return ExpectedHistogram(cells, floors, pullback)


def kl_divergence(p, q, eps: float = 1e-9) -> tuple[float, np.ndarray]:
    """Smoothed KL(p || q) and its gradient with respect to ``p``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if eps <= 0:
        raise ValueError("eps must be positive")
    norm = 1.0 + p.size * eps
    ps = (p + eps) / norm
    qs = (q + eps) / norm
    ratio = np.log(ps / qs)
    return float(np.sum(ps * ratio)), (ratio + 1.0) / norm


def initial_state(model: RewardModel, config: ScenarioConfig) -> TrainState:
    n = len(model.params)
    return TrainState(
        params=model.params.values.copy(),
        step=0,
        temperature=anneal_temperature(0, config.train.schedule()),
        m=np.zeros(n),
        v=np.zeros(n),
        rng_seed=config.train.seed,
        next_index=0,
    )


def learning_rate(config: ScenarioConfig, kind: str, step: int) -> float:
    """Learning rate at ``step``: geometric decay to ``learning_rate_end``.

    The end rate defaults to ``LR_DECAY`` times the start; setting it equal to
    the start gives a constant rate.
    """
    t = config.train
    lr = t.learning_rate if t.learning_rate is not None else DEFAULT_LR.get(kind, 0.01)
    end = t.learning_rate_end if t.learning_rate_end is not None else lr * LR_DECAY
    if t.steps <= 0:
        return lr
    frac = min(step / t.steps, 1.0)
    return lr * (end / lr) ** frac


def train_step(
    state: TrainState,
    config: ScenarioConfig,
    model: RewardModel,
    target: TargetDistribution | None = None,
    workers: int = 1,
) -> TrainState:
    """One optimisation step; ``model`` supplies the architecture, ``state`` the parameters."""
    t0 = time.perf_counter()
    t = config.train
    target = target if target is not None else target_histogram(config)
    tau = anneal_temperature(state.step, t.schedule())
    current = model.with_params(state.params)
    lam = sample_hidden_batch(state.rng_seed, state.next_index, t.batch_size)
    hist = expected_histogram(current, config, tau, lam, workers)
    loss, g_cells = kl_divergence(hist.cells, target.cells, t.kl_epsilon)
    if not math.isfinite(loss) or not np.all(np.isfinite(hist.cells)):
        bad = int(np.flatnonzero(~np.isfinite(hist.cells))[0]) if not np.all(np.isfinite(hist.cells)) else -1
        raise NumericError(f"non-finite loss at step {state.step} (histogram cell {bad})")
    grad = hist.pullback(g_cells)
    if not np.all(np.isfinite(grad)):
        names = _param_names(model)
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericError(f"non-finite gradient at step {state.step} for parameter {names[bad]}")
    if hist.floor_count:
        log.warning("step %d: %d soft solves hit the retention floor", state.step, hist.floor_count)

    lr = learning_rate(config, model.kind, state.step)
    k = state.step + 1
    if t.optimizer == "adam":
        m = t.beta1 * state.m + (1 - t.beta1) * grad
        v = t.beta2 * state.v + (1 - t.beta2) * grad * grad
        m_hat = m / (1 - t.beta1**k)
        v_hat = v / (1 - t.beta2**k)
        params = state.params - lr * m_hat / (np.sqrt(v_hat) + t.eps)
    else:
        m, v = state.m, state.v
        params = state.params - lr * grad
    return TrainState(
        params=params,
        step=k,
        temperature=anneal_temperature(k, t.schedule()),
        m=m,
        v=v,
        rng_seed=state.rng_seed,
        next_index=state.next_index + t.batch_size,
        loss_history=[*state.loss_history, (state.step, loss, tau)],
        wall_ms=[*state.wall_ms, (time.perf_counter() - t0) * 1000.0],
    )


def _param_names(model: RewardModel) -> list[str]:
    names = []
    for name, shape in model.params.layout:
        size = int(np.prod(shape)) if shape else 1
        names.extend(name if size == 1 else f"{name}[{i}]" for i in range(size))
    return names


def train(
    config: ScenarioConfig,
    out_dir: str | None = None,
    workers: int = 1,
    resume: str | None = None,
    progress: Callable[[TrainState], None] | None = None,
) -> TrainState:
    """Run ``config.train.steps`` steps (counting from a resumed step, if any)."""
    if resume:
        model, state = load_train_state(resume, config)
    else:
        model = make_model(config.reward_model)
        state = initial_state(model, config)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    target = target_histogram(config)
    interval = config.train.checkpoint_interval
    while state.step < config.train.steps:
        state = train_step(state, config, model, target, workers)
        if progress:
            progress(state)
        if out_dir and interval and state.step % interval == 0 and state.step < config.train.steps:
            save_train_state(os.path.join(out_dir, f"checkpoint-{state.step:06d}.txt"), model, state, config)
    if out_dir:
        save_train_state(os.path.join(out_dir, "checkpoint.txt"), model, state, config)
        write_loss_csv(os.path.join(out_dir, "loss_history.csv"), state, config)
    return state


def provenance_header(config: ScenarioConfig, seed: int) -> str:
    return f"# eprgame {__version__} config_hash={config.config_hash()} seed={seed}\n"


def write_loss_csv(path: str, state: TrainState, config: ScenarioConfig) -> None:
    walls = [math.nan] * (len(state.loss_history) - len(state.wall_ms)) + list(state.wall_ms)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(provenance_header(config, state.rng_seed))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "temperature", "wall_time_ms"])
        for (step, loss, tau), ms in zip(state.loss_history, walls):
            w.writerow([step, f"{loss:.17g}", f"{tau:.17g}", f"{ms:.3f}"])


def save_train_state(path: str, model: RewardModel, state: TrainState, config: ScenarioConfig) -> None:
    history = np.array(state.loss_history, dtype=float).reshape(-1, 3)
    write_checkpoint(
        path,
        model.with_params(state.params),
        extra_header={
            "version": __version__,
            "config_hash": config.config_hash(),
            "step": state.step,
            "temperature": state.temperature,
            "rng_seed": state.rng_seed,
            "next_index": state.next_index,
        },
        extra_sections={"adam.m": state.m, "adam.v": state.v, "loss_history": history},
    )


def load_train_state(path: str, config: ScenarioConfig) -> tuple[RewardModel, TrainState]:
    model, header, sections = read_checkpoint(path)
    n = len(model.params)
    history = sections.get("loss_history", np.zeros((0, 3))).reshape(-1, 3)
    state = TrainState(
        params=model.params.values.copy(),
        step=int(header.get("step", 0)),
        temperature=float(header.get("temperature", anneal_temperature(0, config.train.schedule()))),
        m=sections.get("adam.m", np.zeros(n)).reshape(n),
        v=sections.get("adam.v", np.zeros(n)).reshape(n),
        rng_seed=int(header.get("rng_seed", config.train.seed)),
        next_index=int(header.get("next_index", 0)),
        loss_history=[(int(s), float(l), float(t)) for s, l, t in history],
    )
    return model, state
