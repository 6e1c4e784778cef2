"""Sequential passivity verification and gain synthesis along a cascade.

Each subsystem is processed in index order. Step i receives a compact
packet from step i-1 (the closed-loop margin block plus two coupling
products) and solves a local feasibility problem for a storage matrix Q_i
and a passivity rate eps_i:

* local_verify tries first with all feedback gains pinned to zero;
* local_synthesize additionally searches state-feedback gains K(i,i),
  K(i,i-1) and K(i-1,i), resolving the Q*K bilinearity in two stages
  (a substitution stage for Q, then an exact re-solve with Q frozen).

Positivity of the step's margin block M_cl is imposed through a two-block
Schur form so the local problem stays affine. The chain of M_cl blocks is
exactly the Schur recursion of the global closed-loop certificate matrix,
which is what makes the one-pass design sound; the oracle module checks
that global matrix independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag, solve_triangular

from . import blockla, lmi
from .model import (
    CascadeNetwork,
    InvalidNetwork,
    Subsystem,
    as_matrix,
    extend_network,
    validate_network,
)

__all__ = [
    "EPS_MIN",
    "ROUTE_VERIFIED",
    "ROUTE_SYNTHESIZED",
    "DimensionMismatch",
    "GainRecoveryFailed",
    "DesignFailed",
    "MessengerPacket",
    "DesignRecord",
    "NetworkDesignState",
    "local_verify",
    "local_synthesize",
    "recover_gains",
    "build_packet",
    "run_cascade_design",
    "add_subsystem",
    "closed_loop_blocks",
    "design_tridiagonal",
]

# Smallest admissible passivity rate; makes "eps > 0" decidable.
EPS_MIN = 1e-6
# Storage matrices are searched over Q >= Q_FLOOR * I. Declining problems
# that are feasible only with a nearly singular Q is a conservative failure
# (it just routes to synthesis), never a wrong certificate.
Q_FLOOR = 1e-4
# Fraction of the problem scale the solver chases as margin before stopping
# early. Larger values fatten M_cl for downstream steps.
TARGET_FRACTION = 0.2

ROUTE_VERIFIED = "Verified"
ROUTE_SYNTHESIZED = "Synthesized"


class DimensionMismatch(ValueError):
    """Inputs whose shapes cannot describe one cascade step."""


class GainRecoveryFailed(Exception):
    """Least-squares gain recovery left too large a residual.

    Only raised on the single-stage synthesis path; the default two-stage
    path re-solves for exact gains instead.
    """

    def __init__(self, residual: float, tolerance: float):
        self.residual = residual
        self.tolerance = tolerance
        super().__init__(
            f"gain recovery residual {residual:.3e} exceeds tolerance {tolerance:.3e}"
        )


class DesignFailed(Exception):
    """Both the verification and synthesis routes failed at one step."""

    def __init__(self, index: int, diagnosis: lmi.Infeasible):
        self.index = index
        self.diagnosis = diagnosis
        super().__init__(
            f"design failed at step {index} "
            f"(best margin {diagnosis.best_lambda_min:.3e}, {diagnosis.reason})"
        )


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MessengerPacket:
    """What subsystem i-1 sends forward to subsystem i.

    M_prev is the positive definite closed-loop margin block of step i-1;
    G_prev = Q_prev B1_prev h(i-1,i) is the fixed part of the upstream
    coupling; T_prev = Q_prev B3_prev is the channel through which step i
    may still shape the gain K(i-1,i) acting on subsystem i-1's input.
    None of these reveal A_prev or C_prev.
    """

    prev_index: int
    M_prev: np.ndarray
    G_prev: np.ndarray
    T_prev: np.ndarray

    def __post_init__(self):
        if self.prev_index < 1:
            raise DimensionMismatch("prev_index must be >= 1")
        M = blockla.symmetric_part(self.M_prev, "M_prev")
        blockla.cholesky_lower(M)
        G = np.array(self.G_prev, dtype=float)
        T = np.array(self.T_prev, dtype=float)
        n_prev = M.shape[0]
        if G.ndim != 2 or G.shape[0] != n_prev:
            raise DimensionMismatch(f"G_prev must have {n_prev} rows, got shape {G.shape}")
        if T.ndim != 2 or T.shape[0] != n_prev:
            raise DimensionMismatch(f"T_prev must have {n_prev} rows, got shape {T.shape}")
        for name, a in (("M_prev", M), ("G_prev", G), ("T_prev", T)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)


@dataclass(frozen=True)
class DesignRecord:
    """Per-subsystem outcome of one protocol step.

    Gain fields are None when not designed; a Verified route carries no
    gains at all. K_prev_to_self is the gain K(i-1,i) designed at this step
    for the previous subsystem's input.
    """

    index: int
    Q: np.ndarray
    epsilon: float
    K_self: np.ndarray | None
    K_to_prev: np.ndarray | None
    K_prev_to_self: np.ndarray | None
    M_cl: np.ndarray
    route: str

    def __post_init__(self):
        if self.route not in (ROUTE_VERIFIED, ROUTE_SYNTHESIZED):
            raise ValueError(f"unknown route {self.route!r}")
        if self.index < 1:
            raise ValueError("index must be >= 1")
        if not (self.epsilon > 0.0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be positive and finite")
        object.__setattr__(self, "Q", _frozen(blockla.symmetric_part(self.Q, "Q")))
        object.__setattr__(self, "M_cl", _frozen(blockla.symmetric_part(self.M_cl, "M_cl")))
        for name in ("K_self", "K_to_prev", "K_prev_to_self"):
            val = getattr(self, name)
            if val is not None:
                if self.route == ROUTE_VERIFIED:
                    raise ValueError("a Verified record carries no gains")
                object.__setattr__(self, name, as_matrix(val, name))


@dataclass(frozen=True)
class NetworkDesignState:
    """A fully designed cascade: the network plus one record per subsystem."""

    net: CascadeNetwork
    records: tuple[DesignRecord, ...]
    global_epsilon: float = field(init=False)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValueError("a design state needs at least one record")
        for pos, rec in enumerate(records, start=1):
            if rec.index != pos:
                raise ValueError(f"records must be contiguous from 1, found index {rec.index} at position {pos}")
        if len(records) != self.net.n_subsystems:
            raise ValueError(
                f"{self.net.n_subsystems} subsystems but {len(records)} records"
            )
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "global_epsilon", min(r.epsilon for r in records))


def _sym2(M: np.ndarray) -> np.ndarray:
    return M + M.T


class _Layout:
    """Maps named matrix/scalar variables onto one flat theta vector."""

    def __init__(self):
        self._slots: list[tuple[str, str, tuple, int, int]] = []
        self.size = 0

    def _add(self, name, kind, meta, width):
        self._slots.append((name, kind, meta, self.size, width))
        self.size += width

    def scalar(self, name):
        self._add(name, "scalar", (), 1)

    def sym(self, name, n):
        self._add(name, "sym", (n,), lmi.sym_vec_size(n))

    def full(self, name, shape):
        self._add(name, "full", tuple(shape), int(np.prod(shape)))

    def index(self, name) -> int:
        for slot_name, kind, _, start, width in self._slots:
            if slot_name == name:
                if width != 1:
                    raise KeyError(f"{name} is not a scalar slot")
                return start
        raise KeyError(name)

    def unpack(self, theta) -> dict:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        out = {}
        for name, kind, meta, start, width in self._slots:
            seg = theta[start:start + width]
            if kind == "scalar":
                out[name] = float(seg[0])
            elif kind == "sym":
                out[name] = lmi.vec_to_sym(seg, meta[0])
            else:
                out[name] = seg.reshape(meta)
        return out


def _assemble_problem(layout, master_fn, eq_fn, bounds) -> lmi.AffineFeasibilityProblem:
    # master_fn and eq_fn are affine in the variables, so probing the zero
    # point and each unit vector recovers the exact coefficient blocks.
    zero = layout.unpack(np.zeros(layout.size))
    M0 = master_fn(zero)
    r0 = np.asarray(eq_fn(zero), dtype=float).reshape(-1)
    coeffs = []
    cols = []
    for k in range(layout.size):
        unit = np.zeros(layout.size)
        unit[k] = 1.0
        probe = layout.unpack(unit)
        coeffs.append(master_fn(probe) - M0)
        cols.append(np.asarray(eq_fn(probe), dtype=float).reshape(-1) - r0)
    E = np.stack(cols, axis=1) if layout.size else np.zeros((r0.size, 0))
    lb = np.full(layout.size, -np.inf)
    for name, bound in bounds.items():
        lb[layout.index(name)] = bound
    return lmi.AffineFeasibilityProblem(
        var_count=layout.size,
        constant_block=M0,
        coeff_blocks=tuple(coeffs),
        eq_matrix=E,
        eq_rhs=-r0,
        lower_bounds=lb,
    )


def _step_margin(sub: Subsystem) -> float:
    """Positivity floor for one step, scaled from the subsystem's own data.

    Deriving the floor from the assembled problem instead would let a
    large incoming packet raise the bar past what the step's storage can
    structurally clear.
    """
    return 1e-6 * max(1.0, float(np.abs(sub.A).max()), float(np.abs(sub.C).max()))


def _solver_target(prob, packet, tau) -> float:
    scale = max(1.0, float(np.abs(prob.constant_block).max()))
    t = TARGET_FRACTION * scale
    if packet is not None:
        # The packet's margin block is a principal block of the master, so
        # no point can clear more margin than it carries.
        t = min(t, 0.9 * float(np.linalg.eigvalsh(packet.M_prev)[0]))
    return max(t, 2.0 * tau)


def _maximize_epsilon(prob, theta, eps_index, tau, eps_min) -> float:
    """Half-supremum rule for the passivity rate.

    The master matrix is affine and non-increasing in eps, so its feasible
    eps set is an interval. Bisect for the supremum, then settle on half of
    it: a deterministic compromise between the rate itself and the margin
    left in M_cl.
    """
    work = np.array(theta, dtype=float)
    eps0 = float(work[eps_index])

    def feasible(eps):
        work[eps_index] = eps
        return float(np.linalg.eigvalsh(prob.master(work))[0]) >= tau

    hi = max(1.0, 2.0 * eps0)
    for _ in range(60):
        if not feasible(hi):
            break
        hi *= 2.0
    else:
        return eps0
    lo = eps0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    half = 0.5 * lo
    if half >= eps_min and feasible(half):
        return half
    return eps0


def _check_self_coupling(h_self, sub):
    if h_self is None:
        return np.zeros((sub.p, sub.n))
    h = as_matrix(h_self, "h(i,i)")
    if h.shape != (sub.p, sub.n):
        raise DimensionMismatch(f"h(i,i) is {h.shape}, expected ({sub.p}, {sub.n})")
    return h


def _check_prev_coupling(h_prev, sub, packet, prev_n=None):
    if packet is None:
        if h_prev is not None:
            raise DimensionMismatch("a coupling to the previous subsystem needs a packet")
        return None
    n_prev = packet.M_prev.shape[0]
    if prev_n is not None and prev_n != n_prev:
        raise DimensionMismatch(f"prev_n={prev_n} but the packet describes {n_prev} states")
    if packet.G_prev.shape[1] != sub.n:
        raise DimensionMismatch(
            f"packet G_prev has {packet.G_prev.shape[1]} columns, subsystem has {sub.n} states"
        )
    if h_prev is None:
        return np.zeros((sub.p, n_prev))
    h = as_matrix(h_prev, "h(i,i-1)")
    if h.shape != (sub.p, n_prev):
        raise DimensionMismatch(f"h(i,i-1) is {h.shape}, expected ({sub.p}, {n_prev})")
    return h


def _closed_margin(sub, packet, Q, eps, coupling_self, X):
    """M_cl = S - F with the neighbor correction F applied through the
    packet's Cholesky factor."""
    S = -_sym2(sub.A.T @ Q + coupling_self) - eps * np.eye(sub.n)
    if packet is None:
        return blockla.symmetric_part(S)
    U = blockla.cholesky_lower(packet.M_prev)
    W = solve_triangular(U, X.T, lower=True)
    return blockla.symmetric_part(S - W.T @ W)


def _not_pd(point, reason) -> lmi.Infeasible:
    return lmi.Infeasible(
        best_lambda_min=point.lambda_min,
        best_theta=point.theta,
        evaluations=0,
        reason=reason,
    )


def local_verify(
    sub: Subsystem,
    h_self=None,
    h_prev=None,
    packet: MessengerPacket | None = None,
    *,
    eps_min: float = EPS_MIN,
    margin: float | None = None,
    target: float | None = None,
    max_evals: int = 5000,
):
    """Try to certify the step with all gains pinned to zero.

    Returns a DesignRecord with route Verified, or lmi.Infeasible (which
    the caller routes to synthesis).
    """
    index = 1 if packet is None else packet.prev_index + 1
    h_self = _check_self_coupling(h_self, sub)
    h_prev = _check_prev_coupling(h_prev, sub, packet)
    n = sub.n

    layout = _Layout()
    layout.sym("Q", n)
    layout.scalar("eps")

    def master(v):
        Q, eps = v["Q"], v["eps"]
        S = -_sym2(sub.A.T @ Q + Q @ sub.B1 @ h_self) - eps * np.eye(n)
        q_block = Q - Q_FLOOR * np.eye(n)
        if packet is None:
            return block_diag(S, q_block)
        X = packet.G_prev.T + Q @ sub.B1 @ h_prev
        top = np.block([[S, X], [X.T, packet.M_prev]])
        return block_diag(top, q_block)

    def equalities(v):
        return (v["Q"] @ sub.B2 - sub.C.T).ravel()

    prob = _assemble_problem(layout, master, equalities, {"eps": eps_min})
    tau = _step_margin(sub) if margin is None else float(margin)
    goal = _solver_target(prob, packet, tau) if target is None else float(target)
    point = lmi.solve_feasibility(prob, tau, target=goal, max_evals=max_evals)
    if isinstance(point, lmi.Infeasible):
        return point

    v = layout.unpack(point.theta)
    Q = v["Q"]
    try:
        blockla.cholesky_lower(Q)
    except blockla.NotPositiveDefinite:
        return _not_pd(point, "StorageNotPositiveDefinite")

    theta = np.array(point.theta)
    eps = _maximize_epsilon(prob, theta, layout.index("eps"), tau, eps_min)
    theta[layout.index("eps")] = eps
    if not lmi.certify_point(theta, prob, tau).ok:
        theta, eps = np.array(point.theta), v["eps"]
        if not lmi.certify_point(theta, prob, tau).ok:
            return _not_pd(point, "CertificationFailed")

    X = None if packet is None else packet.G_prev.T + Q @ sub.B1 @ h_prev
    M_cl = _closed_margin(sub, packet, Q, eps, Q @ sub.B1 @ h_self, X)
    try:
        blockla.cholesky_lower(M_cl)
    except blockla.NotPositiveDefinite:
        return _not_pd(point, "MarginNotPositiveDefinite")

    return DesignRecord(
        index=index,
        Q=Q,
        epsilon=eps,
        K_self=None,
        K_to_prev=None,
        K_prev_to_self=None,
        M_cl=M_cl,
        route=ROUTE_VERIFIED,
    )


def recover_gains(Q, B3, Z):
    """Invert the substitution Z = Q B3 K in least squares.

    Returns (K, residual) with residual the infinity norm of Q B3 K - Z.
    """
    Q = np.asarray(Q, dtype=float)
    B3 = np.asarray(B3, dtype=float)
    Z = np.asarray(Z, dtype=float)
    G = Q @ B3
    K, *_ = np.linalg.lstsq(G, Z, rcond=None)
    residual = float(np.abs(G @ K - Z).max()) if Z.size else 0.0
    return K, residual


def local_synthesize(
    sub: Subsystem,
    h_self=None,
    h_prev=None,
    packet: MessengerPacket | None = None,
    prev_n: int | None = None,
    *,
    eps_min: float = EPS_MIN,
    margin: float | None = None,
    target: float | None = None,
    two_stage: bool = True,
    recovery_rtol: float = 1e-8,
    max_evals: int = 5000,
):
    """Design local feedback gains that passivate the step.

    Stage 1 searches (Q, eps) with the gain products substituted by free
    matrices Z = Q B3 K, keeping the problem affine. Stage 2 freezes Q and
    re-solves directly over the gains, so the returned gains are exactly
    realizable. With two_stage=False the gains are instead recovered from
    the stage-1 substitutes by least squares; a residual above tolerance
    raises GainRecoveryFailed.
    """
    index = 1 if packet is None else packet.prev_index + 1
    h_self = _check_self_coupling(h_self, sub)
    h_prev = _check_prev_coupling(h_prev, sub, packet, prev_n)
    n, p = sub.n, sub.p
    n_prev = None if packet is None else packet.M_prev.shape[0]
    p_prev = None if packet is None else packet.T_prev.shape[1]

    stage1 = _Layout()
    stage1.sym("Q", n)
    stage1.scalar("eps")
    stage1.full("Z_self", (n, n))
    if packet is not None:
        stage1.full("Z_prev", (n, n_prev))
        stage1.full("K_prev_to_self", (p_prev, n))

    def master1(v):
        Q, eps = v["Q"], v["eps"]
        S = -_sym2(sub.A.T @ Q + Q @ sub.B1 @ h_self + v["Z_self"]) - eps * np.eye(n)
        q_block = Q - Q_FLOOR * np.eye(n)
        if packet is None:
            return block_diag(S, q_block)
        upstream = packet.G_prev + packet.T_prev @ v["K_prev_to_self"]
        X = upstream.T + Q @ sub.B1 @ h_prev + v["Z_prev"]
        top = np.block([[S, X], [X.T, packet.M_prev]])
        return block_diag(top, q_block)

    def equalities(v):
        return (v["Q"] @ sub.B2 - sub.C.T).ravel()

    prob1 = _assemble_problem(stage1, master1, equalities, {"eps": eps_min})
    tau1 = _step_margin(sub) if margin is None else float(margin)
    goal1 = _solver_target(prob1, packet, tau1) if target is None else float(target)
    point1 = lmi.solve_feasibility(prob1, tau1, target=goal1, max_evals=max_evals)
    if isinstance(point1, lmi.Infeasible):
        return point1

    v1 = stage1.unpack(point1.theta)
    Q = v1["Q"]
    try:
        blockla.cholesky_lower(Q)
    except blockla.NotPositiveDefinite:
        return _not_pd(point1, "StorageNotPositiveDefinite")

    QB3 = Q @ sub.B3

    stage2 = _Layout()
    stage2.scalar("eps")
    stage2.full("K_self", (p, n))
    if packet is not None:
        stage2.full("K_to_prev", (p, n_prev))
        stage2.full("K_prev_to_self", (p_prev, n))

    def master2(v):
        S = -_sym2(sub.A.T @ Q + Q @ sub.B1 @ h_self + QB3 @ v["K_self"]) - v["eps"] * np.eye(n)
        if packet is None:
            return S
        upstream = packet.G_prev + packet.T_prev @ v["K_prev_to_self"]
        X = upstream.T + Q @ sub.B1 @ h_prev + QB3 @ v["K_to_prev"]
        return np.block([[S, X], [X.T, packet.M_prev]])

    prob2 = _assemble_problem(stage2, master2, lambda v: np.zeros(0), {"eps": eps_min})
    # Stage 2 re-solves the same positivity problem, so it keeps stage 1's
    # floor; deriving a fresh one from the stage-2 constant block would let
    # a large found Q inflate the requirement beyond reach.
    tau2 = tau1

    if two_stage:
        goal2 = _solver_target(prob2, packet, tau2) if target is None else float(target)
        point2 = lmi.solve_feasibility(prob2, tau2, target=goal2, max_evals=max_evals)
        if isinstance(point2, lmi.Infeasible):
            return point2
        theta2 = np.array(point2.theta)
    else:
        K_self, r_self = recover_gains(Q, sub.B3, v1["Z_self"])
        worst = r_self
        tol = recovery_rtol * max(1.0, float(np.abs(v1["Z_self"]).max()))
        pieces = {"eps": v1["eps"], "K_self": K_self}
        if packet is not None:
            K_to_prev, r_prev = recover_gains(Q, sub.B3, v1["Z_prev"])
            worst = max(worst, r_prev)
            tol = recovery_rtol * max(
                1.0, float(np.abs(v1["Z_self"]).max()), float(np.abs(v1["Z_prev"]).max())
            )
            pieces["K_to_prev"] = K_to_prev
            pieces["K_prev_to_self"] = v1["K_prev_to_self"]
        if worst > tol:
            raise GainRecoveryFailed(worst, tol)
        theta2 = np.zeros(stage2.size)
        for name, kind, meta, start, width in stage2._slots:
            val = pieces[name]
            if kind == "scalar":
                theta2[start] = val
            else:
                theta2[start:start + width] = np.asarray(val, dtype=float).ravel()
        if not lmi.certify_point(theta2, prob2, tau2).ok:
            return _not_pd(point1, "CertificationFailed")

    eps_idx = stage2.index("eps")
    eps_found = float(theta2[eps_idx])
    eps = _maximize_epsilon(prob2, theta2, eps_idx, tau2, eps_min)
    theta2[eps_idx] = eps
    if not lmi.certify_point(theta2, prob2, tau2).ok:
        eps = eps_found
        theta2[eps_idx] = eps
        if not lmi.certify_point(theta2, prob2, tau2).ok:
            return _not_pd(point1, "CertificationFailed")

    v2 = stage2.unpack(theta2)
    K_self = v2["K_self"]
    K_to_prev = v2.get("K_to_prev")
    K_prev_to_self = v2.get("K_prev_to_self")

    coupling_self = Q @ sub.B1 @ h_self + QB3 @ K_self
    if packet is None:
        X = None
    else:
        X = (packet.G_prev + packet.T_prev @ K_prev_to_self).T + Q @ sub.B1 @ h_prev + QB3 @ K_to_prev
    M_cl = _closed_margin(sub, packet, Q, eps, coupling_self, X)
    try:
        blockla.cholesky_lower(M_cl)
    except blockla.NotPositiveDefinite:
        return _not_pd(point1, "MarginNotPositiveDefinite")

    return DesignRecord(
        index=index,
        Q=Q,
        epsilon=eps,
        K_self=K_self,
        K_to_prev=K_to_prev,
        K_prev_to_self=K_prev_to_self,
        M_cl=M_cl,
        route=ROUTE_SYNTHESIZED,
    )


def build_packet(record: DesignRecord, sub: Subsystem, h_next=None) -> MessengerPacket | None:
    """Packet for the successor, or None when no successor is declared.

    A zero coupling matrix still yields a packet (with G_prev = 0); only
    h_next=None means the cascade ends here.
    """
    if h_next is None:
        return None
    if record.Q.shape[0] != sub.n:
        raise DimensionMismatch(
            f"record Q is {record.Q.shape} but the subsystem has {sub.n} states"
        )
    h = as_matrix(h_next, "h(i,i+1)")
    if h.shape[0] != sub.p:
        raise DimensionMismatch(f"h(i,i+1) has {h.shape[0]} rows, expected {sub.p}")
    return MessengerPacket(
        prev_index=record.index,
        M_prev=record.M_cl,
        G_prev=record.Q @ sub.B1 @ h,
        T_prev=record.Q @ sub.B3,
    )


def run_cascade_design(
    net: CascadeNetwork,
    *,
    eps_min: float = EPS_MIN,
    margin: float | None = None,
    target: float | None = None,
    two_stage: bool = True,
    max_evals: int = 5000,
) -> NetworkDesignState:
    """One pass down the cascade: verify where possible, synthesize where not.

    Raises InvalidNetwork on structural problems and DesignFailed(i) when
    neither route clears step i. Step i never looks at the coupling to its
    successor until its own record is final, which is what makes later
    subsystem additions reproduce this function's records exactly.
    """
    report = validate_network(net)
    if not report.ok:
        raise InvalidNetwork(report)

    opts = dict(eps_min=eps_min, margin=margin, target=target, max_evals=max_evals)
    records: list[DesignRecord] = []
    packet = None
    for i in range(1, net.n_subsystems + 1):
        sub = net.subsystems[i - 1]
        h_self = net.h(i, i)
        h_prev = net.h(i, i - 1) if i > 1 else None
        rec = local_verify(sub, h_self, h_prev, packet, **opts)
        if isinstance(rec, lmi.Infeasible):
            rec = local_synthesize(sub, h_self, h_prev, packet, two_stage=two_stage, **opts)
        if isinstance(rec, lmi.Infeasible):
            raise DesignFailed(i, rec)
        records.append(rec)
        if i < net.n_subsystems:
            packet = build_packet(rec, sub, net.h_or_zero(i, i + 1))
    return NetworkDesignState(net=net, records=tuple(records))


def add_subsystem(
    state: NetworkDesignState,
    new_sub: Subsystem,
    h_self=None,
    h_prev=None,
    h_to_new=None,
    *,
    eps_min: float = EPS_MIN,
    margin: float | None = None,
    target: float | None = None,
    two_stage: bool = True,
    max_evals: int = 5000,
) -> NetworkDesignState:
    """Grow a designed cascade by one subsystem without touching old records.

    h_self is h(N+1,N+1), h_prev is h(N+1,N), h_to_new is h(N,N+1). The
    packet is built from record N exactly as run_cascade_design would have
    built it, so the result matches a from-scratch design of the larger
    network record for record.
    """
    N = len(state.records)
    last_sub = state.net.subsystems[-1]
    last_rec = state.records[-1]

    if h_to_new is None:
        h_to_new_block = np.zeros((last_sub.p, new_sub.n))
    else:
        h_to_new_block = as_matrix(h_to_new, "h(N,N+1)")
        if h_to_new_block.shape != (last_sub.p, new_sub.n):
            raise DimensionMismatch(
                f"h(N,N+1) is {h_to_new_block.shape}, expected ({last_sub.p}, {new_sub.n})"
            )
    packet = build_packet(last_rec, last_sub, h_to_new_block)

    opts = dict(eps_min=eps_min, margin=margin, target=target, max_evals=max_evals)
    rec = local_verify(new_sub, h_self, h_prev, packet, **opts)
    if isinstance(rec, lmi.Infeasible):
        rec = local_synthesize(new_sub, h_self, h_prev, packet, two_stage=two_stage, **opts)
    if isinstance(rec, lmi.Infeasible):
        raise DesignFailed(N + 1, rec)

    additions = {
        (N + 1, N + 1): None if h_self is None else as_matrix(h_self, "h(N+1,N+1)"),
        (N + 1, N): None if h_prev is None else as_matrix(h_prev, "h(N+1,N)"),
        (N, N + 1): None if h_to_new is None else h_to_new_block,
    }
    net = extend_network(state.net, new_sub, additions)
    report = validate_network(net)
    if not report.ok:
        raise InvalidNetwork(report)
    return NetworkDesignState(net=net, records=state.records + (rec,))


def closed_loop_blocks(net: CascadeNetwork, storages, epsilons, gains=None) -> blockla.BlockTriDiagonal:
    """Blocks of the closed-loop certificate matrix for given (Q_i, eps_i, K).

    storages and epsilons are per-subsystem; gains maps (i, j) index pairs
    to gain matrices K(i,j), absent pairs meaning zero. The result feeds
    blockla.tridiag_pd_sequence, whose Schur sequence reproduces the
    M_cl blocks of a protocol run.
    """
    N = net.n_subsystems
    storages = [blockla.symmetric_part(Qi, f"storages[{k}]") for k, Qi in enumerate(storages)]
    epsilons = [float(e) for e in epsilons]
    if len(storages) != N or len(epsilons) != N:
        raise DimensionMismatch("need one storage matrix and one epsilon per subsystem")
    gains = {} if gains is None else gains

    def coupling(i, j):
        sub = net.subsystems[i - 1]
        M = sub.B1 @ net.h_or_zero(i, j)
        K = gains.get((i, j))
        if K is not None:
            M = M + sub.B3 @ np.asarray(K, dtype=float)
        return storages[i - 1] @ M

    diag = []
    for i in range(1, N + 1):
        sub = net.subsystems[i - 1]
        block = -_sym2(sub.A.T @ storages[i - 1] + coupling(i, i)) - epsilons[i - 1] * np.eye(sub.n)
        diag.append(block)
    supers = [
        -(coupling(i, i + 1) + coupling(i + 1, i).T)
        for i in range(1, N)
    ]
    return blockla.BlockTriDiagonal(tuple(diag), tuple(supers))


def _state_gains(state: NetworkDesignState) -> dict:
    gains = {}
    for rec in state.records:
        if rec.K_self is not None:
            gains[(rec.index, rec.index)] = rec.K_self
        if rec.K_to_prev is not None:
            gains[(rec.index, rec.index - 1)] = rec.K_to_prev
        if rec.K_prev_to_self is not None:
            gains[(rec.index - 1, rec.index)] = rec.K_prev_to_self
    return gains


def design_tridiagonal(state: NetworkDesignState) -> blockla.BlockTriDiagonal:
    """Closed-loop certificate blocks of a designed state (per-block eps_i)."""
    return closed_loop_blocks(
        state.net,
        [rec.Q for rec in state.records],
        [rec.epsilon for rec in state.records],
        _state_gains(state),
    )
