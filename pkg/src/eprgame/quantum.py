"""Born-rule target statistics for planar spin measurements on two qubits.

Convention: a measurement at angle ``theta`` has projectors
``P(s, theta) = (I + s (cos(theta) Z + sin(theta) X)) / 2`` for s = +1, -1.
With this convention the singlet correlation is ``E = -cos(theta_a - theta_b)``.

Distributions over the 16 cells (a, b, x, y) are flat arrays indexed by
:func:`cell_index`; outcomes are ordered +1 before -1, settings 0 before 1.
Settings are weighted uniformly, so each (a, b) block sums to 1/4.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .scenario import OUTCOMES, ScenarioConfig, density_matrix_problem, setting_pairs

_I = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class QuantumInputError(ValueError):
    pass


def cell_index(a: int, b: int, x: int, y: int) -> int:
    """Flat index of cell (a, b, x, y); x and y are +1 / -1."""
    return ((a * 2 + b) * 2 + (0 if x == 1 else 1)) * 2 + (0 if y == 1 else 1)


def cells() -> list[tuple[int, int, int, int]]:
    return [(a, b, x, y) for a, b in setting_pairs() for x in OUTCOMES for y in OUTCOMES]


def cell_label(a: int, b: int, x: int, y: int) -> str:
    return f"a{a}b{b}:{x:+d}{y:+d}"


@dataclass(frozen=True)
class DensityMatrix:
    entries: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.entries, dtype=complex)
        problem = density_matrix_problem(rho, tol=1e-12)
        if problem is None and np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -1e-10:
            problem = "density matrix is not positive semidefinite"
        if problem:
            raise QuantumInputError(problem)
        object.__setattr__(self, "entries", rho)

    @classmethod
    def singlet(cls) -> DensityMatrix:
        psi = np.array([0.0, 1.0, -1.0, 0.0]) / math.sqrt(2.0)
        return cls(np.outer(psi, psi))

    @classmethod
    def product(cls, i: int, j: int) -> DensityMatrix:
        """Computational-basis product state |ij><ij|."""
        psi = np.zeros(4)
        psi[2 * i + j] = 1.0
        return cls(np.outer(psi, psi))


@dataclass(frozen=True)
class TargetDistribution:
    cells: np.ndarray

    def block(self, a: int, b: int) -> np.ndarray:
        start = cell_index(a, b, 1, 1)
        return self.cells[start : start + 4]


def projector(theta: float, s: int) -> np.ndarray:
    return 0.5 * (_I + s * (math.cos(theta) * _Z + math.sin(theta) * _X))


def born_joint_prob(rho: DensityMatrix, theta_a: float, theta_b: float, x: int, y: int) -> float:
    if not isinstance(rho, DensityMatrix):
        rho = DensityMatrix(np.asarray(rho, dtype=complex))
    value = np.trace(rho.entries @ np.kron(projector(theta_a, x), projector(theta_b, y)))
    if abs(value.imag) > 1e-12:
        raise QuantumInputError(f"Born probability has imaginary part {value.imag:.3g}")
    return float(value.real)


def singlet_closed_form(delta: float, x: int, y: int) -> float:
    return (1.0 - x * y * math.cos(delta)) / 4.0


def target_histogram(config: ScenarioConfig) -> TargetDistribution:
    rho = DensityMatrix(config.state.matrix())
    out = np.zeros(16)
    for a, b, x, y in cells():
        theta_a, theta_b = float(config.alice_radians[a]), float(config.bob_radians[b])
        out[cell_index(a, b, x, y)] = born_joint_prob(rho, theta_a, theta_b, x, y) / 4.0
    return TargetDistribution(out)


def target_csv(target: TargetDistribution, header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(header)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["a", "b", "x", "y", "probability"])
    for a, b, x, y in cells():
        writer.writerow([a, b, x, y, f"{target.cells[cell_index(a, b, x, y)]:.17g}"])
    return buf.getvalue()
