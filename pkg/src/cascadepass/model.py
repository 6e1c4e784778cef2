"""Data model for cascade-interconnected linear subsystems.

A cascade is an ordered chain of linear time-invariant subsystems

    dx_i/dt = A_i x_i + B1_i v_i + B2_i w_i + B3_i u_i
    y_i     = C_i x_i

where v_i collects physical coupling from the nearest neighbors
(v = H x with H block tri-diagonal), w_i is an exogenous disturbance
matched to the output y_i, and u_i is a control input sharing the
dimension of v_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

__all__ = [
    "Subsystem",
    "CouplingBlock",
    "CascadeNetwork",
    "GlobalSystem",
    "Violation",
    "ValidationReport",
    "InvalidNetwork",
    "as_matrix",
    "validate_network",
    "assemble_global",
    "extend_network",
]

NON_CASCADE_COUPLING = "NonCascadeCoupling"
DIMENSION_MISMATCH = "DimensionMismatch"
NON_FINITE = "NonFinite"
BAD_INDEX = "BadIndex"


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Coerce ``value`` to a read-only 2-D float array.

    Scalars become 1x1 matrices. One-dimensional input is rejected because
    the row/column intent is ambiguous; callers must pass nested lists or
    2-D arrays.
    """
    a = np.array(value, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        raise ValueError(
            f"{name}: 1-D input is ambiguous, pass an explicit 2-D shape"
        )
    elif a.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D array, got ndim={a.ndim}")
    a.flags.writeable = False
    return a


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Subsystem:
    """One linear subsystem of the chain.

    B1 (neighbor coupling input) and B3 (control input) share a column
    count; B2 (disturbance input) shares its column count with C's rows.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for f in ("A", "B1", "B2", "B3", "C"):
            object.__setattr__(self, f, as_matrix(getattr(self, f), f))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.B1.shape[1]


@dataclass(frozen=True)
class CouplingBlock:
    """Coupling gain h(i, j): subsystem i receives h @ x_j on its v input."""

    to_index: int
    from_index: int
    h: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", as_matrix(self.h, "h"))


@dataclass(frozen=True)
class CascadeNetwork:
    """A chain of subsystems plus the sparse coupling blocks.

    Couplings are keyed (receiver, source) with 1-based indices. Only keys
    with abs(receiver - source) <= 1 describe a cascade; anything else is
    reported by validate_network.
    """

    subsystems: tuple[Subsystem, ...]
    couplings: Mapping[tuple[int, int], CouplingBlock] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        object.__setattr__(self, "couplings", dict(self.couplings))

    @classmethod
    def from_blocks(cls, subsystems, coupling_matrices) -> "CascadeNetwork":
        """Build from raw matrices keyed by (receiver, source)."""
        coup = {
            (i, j): CouplingBlock(to_index=i, from_index=j, h=h)
            for (i, j), h in coupling_matrices.items()
        }
        return cls(subsystems=tuple(subsystems), couplings=coup)

    @property
    def n_subsystems(self) -> int:
        return len(self.subsystems)

    def h(self, i: int, j: int):
        """Coupling matrix h(i, j) or None when absent."""
        block = self.couplings.get((i, j))
        return None if block is None else block.h

    def h_or_zero(self, i: int, j: int) -> np.ndarray:
        """Coupling matrix h(i, j), a zero block when absent."""
        block = self.couplings.get((i, j))
        if block is not None:
            return block.h
        p = self.subsystems[i - 1].p
        n = self.subsystems[j - 1].n
        return np.zeros((p, n))


@dataclass(frozen=True)
class GlobalSystem:
    """Stacked matrices of the whole cascade.

    A, B1, B2, B3, C are block diagonal; H is the block tri-diagonal
    coupling map with v = H x.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    C: np.ndarray
    H: np.ndarray
    state_sizes: tuple[int, ...]
    output_sizes: tuple[int, ...]
    input_sizes: tuple[int, ...]

    def __post_init__(self):
        for f in ("A", "B1", "B2", "B3", "C", "H"):
            object.__setattr__(self, f, _frozen(getattr(self, f)))
        object.__setattr__(self, "state_sizes", tuple(self.state_sizes))
        object.__setattr__(self, "output_sizes", tuple(self.output_sizes))
        object.__setattr__(self, "input_sizes", tuple(self.input_sizes))


@dataclass(frozen=True)
class Violation:
    """One structural problem found by validate_network."""

    code: str
    where: tuple[int, ...]
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "network ok"
        return "\n".join(f"{v.code} at {v.where}: {v.message}" for v in self.violations)


class InvalidNetwork(ValueError):
    """Raised when a network with validation violations is assembled."""

    def __init__(self, report: ValidationReport):
        self.report = report
        super().__init__(str(report))


def validate_network(net: CascadeNetwork) -> ValidationReport:
    """Check structure and dimensions; violations are returned as data."""
    bad: list[Violation] = []
    N = net.n_subsystems
    if N == 0:
        bad.append(Violation(BAD_INDEX, (), "network has no subsystems"))
        return ValidationReport(tuple(bad))

    for i, sub in enumerate(net.subsystems, start=1):
        n = sub.A.shape[0]
        if sub.A.shape[1] != n:
            bad.append(Violation(DIMENSION_MISMATCH, (i,), f"A is {sub.A.shape}, not square"))
            continue
        for name in ("A", "B1", "B2", "B3", "C"):
            if not np.all(np.isfinite(getattr(sub, name))):
                bad.append(Violation(NON_FINITE, (i,), f"{name} has non-finite entries"))
        for name in ("B1", "B2", "B3"):
            rows = getattr(sub, name).shape[0]
            if rows != n:
                bad.append(
                    Violation(DIMENSION_MISMATCH, (i,), f"{name} has {rows} rows, state size is {n}")
                )
        if sub.C.shape[1] != n:
            bad.append(
                Violation(DIMENSION_MISMATCH, (i,), f"C has {sub.C.shape[1]} columns, state size is {n}")
            )
        if sub.B2.shape[1] != sub.C.shape[0]:
            bad.append(
                Violation(
                    DIMENSION_MISMATCH,
                    (i,),
                    f"B2 has {sub.B2.shape[1]} columns but C has {sub.C.shape[0]} rows; "
                    "disturbance and output must share a dimension",
                )
            )
        if sub.B3.shape[1] != sub.B1.shape[1]:
            bad.append(
                Violation(
                    DIMENSION_MISMATCH,
                    (i,),
                    f"B3 has {sub.B3.shape[1]} columns but B1 has {sub.B1.shape[1]}; "
                    "control and coupling inputs must share a dimension",
                )
            )

    for (i, j), block in net.couplings.items():
        if not (1 <= i <= N and 1 <= j <= N):
            bad.append(Violation(BAD_INDEX, (i, j), "coupling index out of range"))
            continue
        if (block.to_index, block.from_index) != (i, j):
            bad.append(
                Violation(BAD_INDEX, (i, j), f"coupling block labeled ({block.to_index}, {block.from_index})")
            )
        if abs(i - j) > 1:
            bad.append(
                Violation(NON_CASCADE_COUPLING, (i, j), "coupling skips past a nearest neighbor")
            )
            continue
        p = net.subsystems[i - 1].p
        n = net.subsystems[j - 1].n
        if block.h.shape != (p, n):
            bad.append(
                Violation(DIMENSION_MISMATCH, (i, j), f"h is {block.h.shape}, expected ({p}, {n})")
            )
        if not np.all(np.isfinite(block.h)):
            bad.append(Violation(NON_FINITE, (i, j), "h has non-finite entries"))

    return ValidationReport(tuple(bad))


def _offsets(sizes) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(sizes)])


def assemble_global(net: CascadeNetwork) -> GlobalSystem:
    """Stack a validated network into global matrices.

    Raises InvalidNetwork when validate_network reports violations.
    """
    report = validate_network(net)
    if not report.ok:
        raise InvalidNetwork(report)

    subs = net.subsystems
    ns = [s.n for s in subs]
    ms = [s.m for s in subs]
    ps = [s.p for s in subs]
    nt, mt, pt = sum(ns), sum(ms), sum(ps)
    on, om, op = _offsets(ns), _offsets(ms), _offsets(ps)

    A = np.zeros((nt, nt))
    B1 = np.zeros((nt, pt))
    B2 = np.zeros((nt, mt))
    B3 = np.zeros((nt, pt))
    C = np.zeros((mt, nt))
    H = np.zeros((pt, nt))

    for k, s in enumerate(subs):
        A[on[k]:on[k + 1], on[k]:on[k + 1]] = s.A
        B1[on[k]:on[k + 1], op[k]:op[k + 1]] = s.B1
        B2[on[k]:on[k + 1], om[k]:om[k + 1]] = s.B2
        B3[on[k]:on[k + 1], op[k]:op[k + 1]] = s.B3
        C[om[k]:om[k + 1], on[k]:on[k + 1]] = s.C

    for (i, j), block in net.couplings.items():
        H[op[i - 1]:op[i], on[j - 1]:on[j]] = block.h

    return GlobalSystem(
        A=A, B1=B1, B2=B2, B3=B3, C=C, H=H,
        state_sizes=tuple(ns), output_sizes=tuple(ms), input_sizes=tuple(ps),
    )


def extend_network(net: CascadeNetwork, sub: Subsystem, new_couplings) -> CascadeNetwork:
    """Append one subsystem plus its coupling blocks, returning a new network.

    ``new_couplings`` maps absolute (receiver, source) index pairs to
    matrices; None values are skipped.
    """
    coup = {key: block.h for key, block in net.couplings.items()}
    for key, h in new_couplings.items():
        if h is not None:
            coup[key] = h
    return CascadeNetwork.from_blocks(net.subsystems + (sub,), coup)
