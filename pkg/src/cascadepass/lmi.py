"""Affine matrix-inequality feasibility with certified output.

A problem asks for theta in R^v with

    Phi(theta) = Phi_0 + sum_k theta_k Phi_k   positive definite (margin tau),
    E theta = e,                               (optional equalities)
    theta_k >= lb_k                            (optional lower bounds)

The solver eliminates the equalities through a null-space parametrization
and maximizes a smoothed minimum eigenvalue of an internally augmented
matrix (bounds enter as 1x1 diagonal slack blocks). The returned point is
always re-certified from scratch; the contract is the certificate, not the
search path. Everything is deterministic: no randomness anywhere.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize

__all__ = [
    "MalformedProblem",
    "AffineFeasibilityProblem",
    "FeasiblePoint",
    "Infeasible",
    "PointCertificate",
    "default_margin",
    "solve_feasibility",
    "certify_point",
    "record_points",
    "sym_vec_size",
    "sym_to_vec",
    "vec_to_sym",
]

# Equality residual acceptance, relative to max(1, ||e||_inf).
EQ_RTOL = 1e-9
_SQRT2 = np.sqrt(2.0)


class MalformedProblem(ValueError):
    """Problem data with inconsistent shapes or asymmetric blocks."""


def sym_vec_size(n: int) -> int:
    return n * (n + 1) // 2


def sym_to_vec(S: np.ndarray) -> np.ndarray:
    """Pack a symmetric n x n matrix into its n(n+1)/2 free coordinates.

    Off-diagonal entries are scaled by sqrt(2) so the packing is an isometry:
    dot(sym_to_vec(A), sym_to_vec(B)) equals the Frobenius inner product.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    iu = np.triu_indices(n)
    v = S[iu].copy()
    v[iu[0] != iu[1]] *= _SQRT2
    return v

def vec_to_sym(v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    S = np.zeros((n, n))
    iu = np.triu_indices(n)
    vals = v.copy()
    vals[iu[0] != iu[1]] /= _SQRT2
    S[iu] = vals
    S[(iu[1], iu[0])] = vals
    return S


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class AffineFeasibilityProblem:
    """Affine feasibility data; all blocks are d x d symmetric."""

    var_count: int
    constant_block: np.ndarray
    coeff_blocks: tuple[np.ndarray, ...]
    eq_matrix: np.ndarray = None
    eq_rhs: np.ndarray = None
    lower_bounds: np.ndarray = None

    def __post_init__(self):
        v = int(self.var_count)
        if v < 0:
            raise MalformedProblem("var_count must be nonnegative")
        object.__setattr__(self, "var_count", v)

        Phi0 = np.array(self.constant_block, dtype=float)
        if Phi0.ndim != 2 or Phi0.shape[0] != Phi0.shape[1]:
            raise MalformedProblem(f"constant_block must be square, got {Phi0.shape}")
        d = Phi0.shape[0]
        blocks = [Phi0] + [np.array(B, dtype=float) for B in self.coeff_blocks]
        if len(blocks) - 1 != v:
            raise MalformedProblem(f"expected {v} coefficient blocks, got {len(blocks) - 1}")
        for k, B in enumerate(blocks):
            if B.shape != (d, d):
                raise MalformedProblem(f"block {k} has shape {B.shape}, expected ({d}, {d})")
            if not np.all(np.isfinite(B)):
                raise MalformedProblem(f"block {k} has non-finite entries")
            if B.size:
                scale = max(1.0, np.abs(B).max())
                if np.abs(B - B.T).max() > 1e-8 * scale:
                    raise MalformedProblem(f"block {k} is not symmetric")
        blocks = [_frozen(0.5 * (B + B.T)) for B in blocks]
        object.__setattr__(self, "constant_block", blocks[0])
        object.__setattr__(self, "coeff_blocks", tuple(blocks[1:]))

        E = self.eq_matrix
        e = self.eq_rhs
        if E is None:
            E = np.zeros((0, v))
            e = np.zeros(0)
        E = np.array(E, dtype=float)
        e = np.array(e, dtype=float).reshape(-1)
        if E.ndim != 2 or E.shape != (e.shape[0], v):
            raise MalformedProblem(
                f"eq_matrix {E.shape} / eq_rhs {e.shape} inconsistent with {v} variables"
            )
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(e))):
            raise MalformedProblem("equalities have non-finite entries")
        object.__setattr__(self, "eq_matrix", _frozen(E))
        object.__setattr__(self, "eq_rhs", _frozen(e))

        lb = self.lower_bounds
        if lb is None:
            lb = np.full(v, -np.inf)
        lb = np.array(lb, dtype=float).reshape(-1)
        if lb.shape != (v,):
            raise MalformedProblem(f"lower_bounds has shape {lb.shape}, expected ({v},)")
        if np.any(np.isnan(lb)) or np.any(lb == np.inf):
            raise MalformedProblem("lower_bounds must be finite or -inf")
        lb.flags.writeable = False
        object.__setattr__(self, "lower_bounds", lb)

    @property
    def dim(self) -> int:
        return self.constant_block.shape[0]

    def master(self, theta) -> np.ndarray:
        """Phi(theta)."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.var_count,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({self.var_count},)")
        M = self.constant_block.copy()
        for k, B in enumerate(self.coeff_blocks):
            if theta[k] != 0.0:
                M += theta[k] * B
        return M


@dataclass(frozen=True)
class FeasiblePoint:
    """Certified solution: lambda_min and eq_residual are recomputed from
    theta, never copied out of the search."""

    theta: np.ndarray
    lambda_min: float
    eq_residual: float

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(self.theta))


@dataclass(frozen=True)
class Infeasible:
    """Search gave up; carries the best point seen for diagnostics."""

    best_lambda_min: float
    best_theta: np.ndarray
    evaluations: int
    reason: str

    def __post_init__(self):
        object.__setattr__(self, "best_theta", _frozen(self.best_theta))


@dataclass(frozen=True)
class PointCertificate:
    ok: bool
    lambda_min: float
    eq_residual: float
    bound_margin: float
    reasons: tuple[str, ...] = field(default_factory=tuple)


def default_margin(prob: AffineFeasibilityProblem) -> float:
    """tau = 1e-6 * max(1, ||Phi_0||_inf)."""
    scale = np.abs(prob.constant_block).max() if prob.constant_block.size else 0.0
    return 1e-6 * max(1.0, float(scale))


_RECORDERS: list[list] = []


@contextlib.contextmanager
def record_points():
    """Collect every (problem, margin, FeasiblePoint) the solver emits.

    Used by audits that re-certify all certificates produced during a run.
    """
    buf: list[tuple[AffineFeasibilityProblem, float, FeasiblePoint]] = []
    _RECORDERS.append(buf)
    try:
        yield buf
    finally:
        # Drop by identity: equal-content buffers must not shadow each other.
        for k, other in enumerate(_RECORDERS):
            if other is buf:
                del _RECORDERS[k]
                break


def _emit(prob, margin, point):
    for buf in _RECORDERS:
        buf.append((prob, margin, point))


class _TargetReached(Exception):
    pass


def solve_feasibility(
    prob: AffineFeasibilityProblem,
    margin: float | None = None,
    *,
    target: float | None = None,
    max_evals: int = 5000,
):
    """Search for a certified feasible point.

    Returns FeasiblePoint on success (lambda_min(Phi) >= margin, equalities
    within tolerance, bounds satisfied) or Infeasible with the best point
    found. ``target`` stops the search early once the smallest eigenvalue of
    the augmented matrix reaches it; larger targets buy margin for downstream
    consumers at the cost of more iterations.
    """
    v = prob.var_count
    d = prob.dim
    scale = max(1.0, float(np.abs(prob.constant_block).max()) if d else 0.0)
    tau = default_margin(prob) if margin is None else float(margin)
    if not (tau > 0.0 and np.isfinite(tau)):
        raise MalformedProblem("margin must be positive and finite")
    if target is None:
        target = max(2.0 * tau, 1e-4 * scale)
    target = max(float(target), tau)

    bounded = np.flatnonzero(np.isfinite(prob.lower_bounds))
    da = d + bounded.size
    if da == 0:
        # No matrix block and no bounds: only the equalities constrain theta.
        E, e = prob.eq_matrix, prob.eq_rhs
        if E.shape[0]:
            theta_p, *_ = np.linalg.lstsq(E, e, rcond=None)
            resid = float(np.abs(E @ theta_p - e).max()) if e.size else 0.0
            if resid > EQ_RTOL * max(1.0, float(np.abs(e).max()) if e.size else 0.0):
                return Infeasible(
                    best_lambda_min=-np.inf,
                    best_theta=theta_p,
                    evaluations=1,
                    reason="InconsistentEqualities",
                )
        else:
            theta_p, resid = np.zeros(v), 0.0
        point = FeasiblePoint(theta=theta_p, lambda_min=np.inf, eq_residual=resid)
        _emit(prob, tau, point)
        return point

    # Augmented coefficient tensor: master block plus one 1x1 slack block
    # (theta_k - lb_k) per bounded variable.
    T = np.zeros((v, da, da))
    for k in range(v):
        T[k, :d, :d] = prob.coeff_blocks[k]
    for slot, k in enumerate(bounded):
        T[k, d + slot, d + slot] += 1.0
    C_aug = np.zeros((da, da))
    C_aug[:d, :d] = prob.constant_block
    for slot, k in enumerate(bounded):
        C_aug[d + slot, d + slot] = -prob.lower_bounds[k]

    E, e = prob.eq_matrix, prob.eq_rhs
    evals = 0
    if E.shape[0]:
        theta_p, *_ = np.linalg.lstsq(E, e, rcond=None)
        resid = np.abs(E @ theta_p - e).max() if e.size else 0.0
        if resid > EQ_RTOL * max(1.0, np.abs(e).max() if e.size else 0.0):
            lam = float(np.linalg.eigvalsh(prob.master(theta_p))[0]) if d else -np.inf
            return Infeasible(
                best_lambda_min=lam,
                best_theta=theta_p,
                evaluations=1,
                reason="InconsistentEqualities",
            )
        basis = null_space(E)
    else:
        theta_p = np.zeros(v)
        basis = np.eye(v)
    f = basis.shape[1]

    C0 = C_aug + (np.tensordot(theta_p, T, axes=1) if v else 0.0)
    D = np.tensordot(basis.T, T.reshape(v, -1), axes=1).reshape(f, da, da) if f else None

    # Work in normalized units: the constant block is scaled to unit size
    # and every free direction to a unit coefficient, so the line searches
    # behave the same regardless of the data's magnitude.
    norm = max(1.0, float(np.abs(C0).max()))
    C0n = C0 / norm
    if f:
        gamma = np.array([max(1e-30, float(np.abs(D[k]).max())) for k in range(f)])
        Dn = D / gamma[:, None, None]
    tau_n = tau / norm
    target_n = target / norm

    best_u = np.zeros(f)
    best_lam = -np.inf

    def evaluate(u):
        nonlocal evals, best_u, best_lam
        evals += 1
        M = C0n if f == 0 else C0n + np.tensordot(u, Dn, axes=1)
        lam, vecs = np.linalg.eigh(M)
        if lam[0] > best_lam:
            best_lam = float(lam[0])
            best_u = np.array(u, dtype=float)
        return lam, vecs

    if f > 0:
        # Smoothing ladder: -s*log(tr exp(-M/s)) is smooth and concave in
        # theta and under-estimates lambda_min by at most s*log(da).
        levels = []
        s = 0.25
        s_floor = max(tau_n / (4.0 * np.log(da + 1.0)), 1e-300)
        while True:
            levels.append(s)
            if s <= s_floor or len(levels) >= 14:
                break
            s /= 10.0

        # The tiny quadratic penalty keeps the objective coercive: without
        # it the optimizer can chase an asymptotic eigenvalue cap forever,
        # inflating the point until roundoff swamps the equalities.
        reg = 1e-12

        def make_objective(s):
            def fun(u):
                lam, vecs = evaluate(u)
                if best_lam >= target_n or evals >= max_evals:
                    raise _TargetReached
                shifted = -(lam - lam[0]) / s
                w = np.exp(shifted)
                total = w.sum()
                value = lam[0] - s * np.log(total) - reg * float(u @ u)
                w /= total
                G = (vecs * w) @ vecs.T
                grad = np.tensordot(Dn, G, axes=([1, 2], [0, 1])) - 2.0 * reg * u
                return -value, -grad
            return fun

        try:
            evaluate(best_u)
            if best_lam < target_n:
                for s in levels:
                    res = minimize(
                        make_objective(s),
                        best_u.copy(),
                        jac=True,
                        method="L-BFGS-B",
                        options={"maxiter": 100, "maxfun": 200, "ftol": 1e-15, "gtol": 1e-12},
                    )
                    if best_lam >= target_n or evals >= max_evals:
                        break
        except _TargetReached:
            pass

        # Pull the point back along the ray from the particular solution:
        # the smallest eigenvalue is concave on the segment, so bisecting
        # for the shortest prefix that still clears a threshold sheds the
        # norm overshoot of the line searches. Below target a thin slice
        # of the achieved margin is traded for the same norm relief.
        if np.isfinite(best_lam) and best_lam > tau_n and np.any(best_u):
            shed = max(target_n, 2.0 * tau_n)
            if best_lam >= shed:
                thr = shed
            else:
                thr = max(0.95 * best_lam, min(best_lam, 1.05 * tau_n))
            u_end = best_u.copy()

            def lam_at(t):
                M = C0n + np.tensordot(t * u_end, Dn, axes=1)
                return float(np.linalg.eigvalsh(M)[0])

            if lam_at(0.0) >= thr:
                best_u = np.zeros(f)
                best_lam = lam_at(0.0)
            else:
                lo, hi = 0.0, 1.0
                for _ in range(50):
                    mid = 0.5 * (lo + hi)
                    if lam_at(mid) >= thr:
                        hi = mid
                    else:
                        lo = mid
                best_u = hi * u_end
                best_lam = lam_at(hi)
    else:
        evaluate(np.zeros(0))

    best_z = (best_u / gamma) * norm if f else np.zeros(0)
    theta = theta_p + (basis @ best_z if f else 0.0)
    lam_master = float(np.linalg.eigvalsh(prob.master(theta))[0]) if d else np.inf
    eq_residual = float(np.abs(E @ theta - e).max()) if E.shape[0] else 0.0
    bounds_ok = bool(np.all(theta[bounded] >= prob.lower_bounds[bounded])) if bounded.size else True
    best_lam_true = best_lam * norm if np.isfinite(best_lam) else lam_master

    if best_lam >= tau_n and lam_master >= tau and bounds_ok:
        point = FeasiblePoint(theta=theta, lambda_min=lam_master, eq_residual=eq_residual)
        _emit(prob, tau, point)
        return point
    reason = "BudgetExhausted" if evals >= max_evals else "Stalled"
    return Infeasible(
        best_lambda_min=best_lam_true,
        best_theta=theta,
        evaluations=evals,
        reason=reason,
    )


def certify_point(
    theta,
    prob: AffineFeasibilityProblem,
    margin: float | None = None,
) -> PointCertificate:
    """Re-check a point against the problem from scratch.

    Failure reasons: MatrixNotPositive (lambda_min below the margin),
    EqualityResidual, BoundViolation.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    tau = default_margin(prob) if margin is None else float(margin)
    reasons = []

    lam = float(np.linalg.eigvalsh(prob.master(theta))[0]) if prob.dim else np.inf
    if not (lam >= tau):
        reasons.append("MatrixNotPositive")

    E, e = prob.eq_matrix, prob.eq_rhs
    eq_residual = float(np.abs(E @ theta - e).max()) if E.shape[0] else 0.0
    if eq_residual > EQ_RTOL * max(1.0, float(np.abs(e).max()) if e.size else 0.0):
        reasons.append("EqualityResidual")

    gaps = theta - prob.lower_bounds
    bound_margin = float(np.min(gaps[np.isfinite(gaps)])) if np.any(np.isfinite(gaps)) else np.inf
    if bound_margin < 0.0:
        reasons.append("BoundViolation")

    return PointCertificate(
        ok=not reasons,
        lambda_min=lam,
        eq_residual=eq_residual,
        bound_margin=bound_margin,
        reasons=tuple(reasons),
    )
