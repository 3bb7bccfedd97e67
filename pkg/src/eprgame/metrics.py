"""Hard deterministic runs, CHSH statistics and histogram comparison."""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .pte_exact import NO_EQUILIBRIUM, solve_batch
from .quantum import TargetDistribution, cell_index, cell_label, cells
from .rewards import RewardModel, payoffs_batch, sample_hidden_batch
from .scenario import ScenarioConfig, build_outcome_subgame, setting_pairs
from .training import kl_divergence

# sign placements of the minus sign in S; the first is the textbook form
CHSH_SIGNS = (
    (1, 1, 1, -1),
    (1, 1, -1, 1),
    (1, -1, 1, 1),
    (-1, 1, 1, 1),
)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class JointHistogram:
    counts: np.ndarray
    runs: int
    nongeneric_count: int
    no_equilibrium_count: int = 0

    def __post_init__(self):
        if int(self.counts.sum()) + self.nongeneric_count != 4 * self.runs:
            raise MetricsError("histogram does not conserve 4 outcomes per run")

    @property
    def skip_rate(self) -> float:
        return self.nongeneric_count / (4 * self.runs)

    def __add__(self, other: JointHistogram) -> JointHistogram:
        return JointHistogram(
            self.counts + other.counts,
            self.runs + other.runs,
            self.nongeneric_count + other.nongeneric_count,
            self.no_equilibrium_count + other.no_equilibrium_count,
        )


@dataclass(frozen=True)
class ChshReport:
    correlators: np.ndarray  # E[a, b]
    s: float
    s_max: float
    violates_bell: bool

    def as_dict(self) -> dict:
        return {
            "E": {f"a{a}b{b}": float(self.correlators[a, b]) for a in (0, 1) for b in (0, 1)},
            "S": self.s,
            "S_max_abs": self.s_max,
            "violates_bell": self.violates_bell,
        }


@dataclass(frozen=True)
class HistogramComparison:
    kl: float
    tv: float
    abs_diff: np.ndarray
    worst_cell: int

    @property
    def max_abs_diff(self) -> float:
        return float(self.abs_diff[self.worst_cell])

    def as_dict(self) -> dict:
        return {
            "kl": self.kl,
            "tv": self.tv,
            "max_abs_cell_deviation": self.max_abs_diff,
            "worst_cell": cell_label(*cells()[self.worst_cell]),
        }


def _run_block(args) -> JointHistogram:
    model, config, seed, start, count = args
    structure = build_outcome_subgame(config, setting_pairs()[0]).structure
    lam = sample_hidden_batch(seed, start, count)
    U = payoffs_batch(model, lam, config).reshape(-1, 2, 4)
    leaf = solve_batch(structure, U).reshape(count, 4)
    ok = leaf >= 0
    flat = (np.arange(4)[None, :] * 4 + leaf)[ok]
    counts = np.bincount(flat, minlength=16).astype(np.int64)
    return JointHistogram(counts, count, int((~ok).sum()), int((leaf == NO_EQUILIBRIUM).sum()))


def hard_run_histogram(
    model: RewardModel,
    config: ScenarioConfig,
    runs: int,
    seed: int,
    workers: int = 1,
    block_size: int | None = None,
) -> JointHistogram:
    """Exact PTE outcome of every (run, setting pair).

    Run ``i`` uses hidden variable ``sample_hidden(seed, i)``.  Degenerate
    solves (several or no survivors) are counted and skipped.
    """
    if runs < 1:
        raise MetricsError(f"runs must be >= 1, got {runs}")
    block = block_size or config.run.block_size
    jobs = [(model, config, seed, start, min(block, runs - start)) for start in range(0, runs, block)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, jobs))
    else:
        parts = [_run_block(job) for job in jobs]
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return total


def empirical_distribution(h: JointHistogram) -> np.ndarray:
    total = h.counts.sum()
    if total <= 0:
        raise MetricsError("every solve was skipped; no frequencies to normalise")
    return h.counts / total


def chsh_value(d) -> ChshReport:
    """Correlators and CHSH value of a 16-cell distribution."""
    d = np.asarray(d, dtype=float)
    E = np.zeros((2, 2))
    for a, b in setting_pairs():
        block = np.array([d[cell_index(a, b, x, y)] for x in (1, -1) for y in (1, -1)])
        mass = block.sum()
        if mass <= 0:
            raise MetricsError(f"setting block a={a}, b={b} has no mass")
        E[a, b] = (block[0] - block[1] - block[2] + block[3]) / mass
    terms = (E[0, 0], E[0, 1], E[1, 0], E[1, 1])
    values = [sum(s * t for s, t in zip(signs, terms)) for signs in CHSH_SIGNS]
    s_max = max(abs(v) for v in values)
    return ChshReport(E, float(values[0]), float(s_max), bool(s_max > 2.0))


def classical_chsh_table() -> list[tuple[tuple[int, int, int, int], int]]:
    """S for every deterministic local assignment (A0, A1, B0, B1)."""
    out = []
    for a0, a1, b0, b1 in itertools.product((1, -1), repeat=4):
        out.append(((a0, a1, b0, b1), a0 * b0 + a0 * b1 + a1 * b0 - a1 * b1))
    return out


def classical_chsh_bound() -> int:
    return max(abs(s) for _, s in classical_chsh_table())


def compare_histograms(emp, target) -> HistogramComparison:
    p = np.asarray(emp, dtype=float)
    q = target.cells if isinstance(target, TargetDistribution) else np.asarray(target, dtype=float)
    kl, _ = kl_divergence(p, q, 1e-9)
    diff = np.abs(p - q)
    return HistogramComparison(kl, float(0.5 * diff.sum()), diff, int(np.argmax(diff)))


def histogram_csv(h: JointHistogram, header: str = "", seed: int | None = None) -> str:
    buf = io.StringIO()
    buf.write(header)
    freq = h.counts / max(h.counts.sum(), 1)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["a", "b", "x", "y", "count", "frequency"])
    for k, (a, b, x, y) in enumerate(cells()):
        w.writerow([a, b, x, y, int(h.counts[k]), f"{freq[k]:.17g}"])
    tail = f"# runs={h.runs} skipped={h.nongeneric_count} no_equilibrium={h.no_equilibrium_count}"
    buf.write(tail + (f" seed={seed}\n" if seed is not None else "\n"))
    return buf.getvalue()


def read_histogram_csv(text: str) -> tuple[JointHistogram, dict[str, int]]:
    """Parse :func:`histogram_csv` output; also returns the trailing metadata."""
    counts = np.zeros(16, dtype=np.int64)
    meta: dict[str, int] = {}
    rows = []
    for line in text.splitlines():
        if line.startswith("# runs="):
            meta = {k: int(v) for k, v in (kv.split("=") for kv in line[2:].split())}
        elif line and not line.startswith("#"):
            rows.append(line)
    reader = csv.DictReader(rows)
    for row in reader:
        if not {"a", "b", "x", "y", "count"} <= set(row):
            raise MetricsError("histogram CSV needs columns a,b,x,y,count")
        counts[cell_index(int(row["a"]), int(row["b"]), int(row["x"]), int(row["y"]))] = int(row["count"])
    if "runs" not in meta:
        raise MetricsError("histogram CSV lacks its trailing '# runs=' line")
    try:
        h = JointHistogram(counts, meta["runs"], meta.get("skipped", 0), meta.get("no_equilibrium", 0))
    except MetricsError as exc:
        raise MetricsError(f"histogram CSV is inconsistent: {exc}") from None
    return h, meta
