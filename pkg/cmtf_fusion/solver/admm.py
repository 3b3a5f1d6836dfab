"""
ADMM inner solvers for one mode of the AO loop.

Conventions (scaled ADMM):

* every factor U has a split Z with dual mu; the least-squares solve pulls U
  toward Z - mu, the prox step sets Z = prox_{g/rho}(U + mu), and the dual
  step adds U - Z to mu;
* a coupled first-mode factor additionally has a dual against its selected
  Delta columns;
* every PARAFAC2 B_k additionally has a dual against P_k DeltaB.

All solvers take ``gram``/``rhs`` with the dataset weight already applied and
compute their step size from ``gram`` unless one is passed in. Arrays in the
state objects are updated in place.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from ..core import tensor_ops
from ..core.coupling import CouplingSpec, DictionaryVariable, delta_update, selected_delta
from ..core.exceptions import SolverAbort, ValidationError
from ..core.prox import Regularizer, prox_apply

logger = logging.getLogger(__name__)

RHO_FLOOR = 1e-12


# ---------- state ----------

@dataclass
class ModeState:
    """Factor, split and dual of one mode; ``rho`` is the last step size used."""
    factor: np.ndarray
    split: np.ndarray
    dual: np.ndarray
    rho: float = 1.0

    @classmethod
    def from_factor(cls, factor: np.ndarray) -> "ModeState":
        factor = np.array(factor, dtype=np.float64, copy=True)
        return cls(factor, factor.copy(), np.zeros_like(factor))


@dataclass
class Parafac2BState:
    """
    B_k with two splits each: a regularization split Z_k and the constraint
    split P_k DeltaB. ``rhos`` holds one step size per slice.
    """
    factors: List[np.ndarray]
    splits: List[np.ndarray]
    duals: List[np.ndarray]
    projections: List[np.ndarray]
    blueprint: np.ndarray
    constraint_duals: List[np.ndarray]
    rhos: np.ndarray = field(default_factory=lambda: np.ones(0))

    @classmethod
    def from_factors(cls, factors: Sequence[np.ndarray], projection_iterations: int) -> "Parafac2BState":
        B = [np.array(b, dtype=np.float64, copy=True) for b in factors]
        P, blueprint = project_parafac2(B, projection_iterations)
        return cls(
            factors=B,
            splits=[b.copy() for b in B],
            duals=[np.zeros_like(b) for b in B],
            projections=P,
            blueprint=blueprint,
            constraint_duals=[np.zeros_like(b) for b in B],
            rhos=np.ones(len(B)),
        )

    def constrained(self) -> List[np.ndarray]:
        """P_k DeltaB for every k."""
        return [P @ self.blueprint for P in self.projections]


# ---------- shared kernels ----------

def compute_step_size(gram: np.ndarray) -> float:
    """trace(gram) / R, floored at ``RHO_FLOOR``."""
    gram = np.asarray(gram, dtype=np.float64)
    rank = gram.shape[0]
    if rank == 0:
        return RHO_FLOOR
    return max(float(np.trace(gram)) / rank, RHO_FLOOR)


def _factor(lhs: np.ndarray):
    try:
        return linalg.cho_factor(lhs)
    except linalg.LinAlgError as exc:
        raise SolverAbort(f"Mode system is not positive definite; the step size underflowed ({exc})") from exc
    except ValueError as exc:
        raise SolverAbort(f"Mode system contains non-finite entries ({exc})") from exc


def solve_right(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve U @ lhs = rhs for U with a symmetric positive definite ``lhs``."""
    return _solve_factored(_factor(lhs), rhs)


def _solve_factored(cho, rhs: np.ndarray) -> np.ndarray:
    return linalg.cho_solve(cho, rhs.T).T


def check_finite(where: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SolverAbort(f"Non-finite iterate in {where}")


def _split_step(state: ModeState, reg: Optional[Regularizer], rho: float) -> None:
    V = state.factor + state.dual
    state.split = V if reg is None or reg.is_identity else prox_apply(reg, V, rho)
    state.dual = state.dual + state.factor - state.split


# ---------- PARAFAC2 projection ----------

def project_parafac2(
    M: Sequence[np.ndarray],
    iters: int,
    weights: Optional[Sequence[float]] = None,
    blueprint: Optional[np.ndarray] = None,
) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    Project {M_k} toward the constant cross-product set.

    Alternates P_k = U_k V_k^T from the thin SVD of M_k DeltaB^T with
    DeltaB = sum_k w_k P_k^T M_k / sum_k w_k, for ``iters`` rounds. The
    starting DeltaB is ``blueprint`` or the identity.
    """
    if iters < 1:
        raise ValidationError(f"Projection needs at least one iteration, got {iters}")
    if not M:
        raise ValidationError("Projection needs at least one matrix")
    rank = M[0].shape[1]
    narrow = [k for k, m in enumerate(M) if m.shape[0] < rank]
    if narrow:
        raise ValidationError(f"Slices {narrow[:5]} have fewer rows than the rank {rank}")
    w = np.ones(len(M)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(M),) or np.any(w <= 0):
        raise ValidationError("Projection weights must be positive, one per slice")
    DB = np.eye(rank) if blueprint is None else np.array(blueprint, dtype=np.float64, copy=True)
    P: List[np.ndarray] = []
    for _ in range(iters):
        P = []
        for m in M:
            U, _, Vh = linalg.svd(m @ DB.T, full_matrices=False)
            P.append(U @ Vh)
        DB = sum(w_k * (p.T @ m) for w_k, p, m in zip(w, P, M)) / w.sum()
    return P, DB


# ---------- mode solvers ----------

def admm_uncoupled_matrix_mode(
    state: ModeState,
    gram: np.ndarray,
    rhs: np.ndarray,
    reg: Optional[Regularizer],
    inner_iterations: int,
    rho: Optional[float] = None,
) -> ModeState:
    """
    ADMM for U[gram + (rho/2) I] = rhs + (rho/2)(Z - mu) with prox on Z.

    ``gram``/``rhs`` are w F^T F and w Y F for a matrix mode, or the Hadamard
    product of partner grams and w * mttkrp for a CP mode.
    """
    rho = compute_step_size(gram) if rho is None else float(rho)
    state.rho = rho
    R = gram.shape[0]
    cho = _factor(gram + 0.5 * rho * np.eye(R))
    for _ in range(inner_iterations):
        state.factor = _solve_factored(cho, rhs + 0.5 * rho * (state.split - state.dual))
        _split_step(state, reg, rho)
    check_finite("matrix mode", state.factor, state.split, state.dual)
    return state


def admm_coupled_first_mode(
    states: Mapping[str, ModeState],
    systems: Mapping[str, Tuple[np.ndarray, np.ndarray]],
    regularizers: Mapping[str, Optional[Regularizer]],
    coupling: CouplingSpec,
    dictionary: DictionaryVariable,
    inner_iterations: int,
    rhos: Optional[Mapping[str, float]] = None,
) -> Dict[str, ModeState]:
    """
    Joint ADMM over all coupled first-mode factors and Delta.

    Each inner iteration solves every participant's system, updates Delta as
    the rho-weighted mean of factor plus coupling dual, then takes the prox
    and dual steps. Coupled columns carry two splits (multiplicity 2 in the
    system), free columns one.
    """
    order = [p.dataset for p in coupling.participants]
    chos = {}
    for p in coupling.participants:
        gram, _ = systems[p.dataset]
        R = gram.shape[0]
        rho = compute_step_size(gram) if rhos is None else float(rhos[p.dataset])
        states[p.dataset].rho = rho
        mult = np.ones(R)
        mult[: p.width] = 2.0
        chos[p.dataset] = _factor(gram + 0.5 * rho * np.diag(mult))

    for _ in range(inner_iterations):
        for p in coupling.participants:
            st = states[p.dataset]
            _, rhs = systems[p.dataset]
            rho = st.rho
            target = st.split - st.dual
            target[:, : p.width] += selected_delta(p, dictionary.delta) - dictionary.duals[p.dataset]
            st.factor = _solve_factored(chos[p.dataset], rhs + 0.5 * rho * target)
        dictionary.delta = delta_update(
            coupling,
            {d: states[d].factor[:, : coupling.participant(d).width] + dictionary.duals[d] for d in order},
            {d: states[d].rho for d in order},
        )
        for p in coupling.participants:
            st = states[p.dataset]
            _split_step(st, regularizers.get(p.dataset), st.rho)
            dictionary.duals[p.dataset] = (
                dictionary.duals[p.dataset] + st.factor[:, : p.width] - selected_delta(p, dictionary.delta)
            )
    for d in order:
        check_finite("coupled first mode", states[d].factor, states[d].split, states[d].dual, dictionary.duals[d])
    check_finite("coupled first mode", dictionary.delta)
    return dict(states)


def admm_bk_mode(
    state: Parafac2BState,
    slices: Sequence[np.ndarray],
    A: np.ndarray,
    C: np.ndarray,
    reg: Optional[Regularizer],
    weight: float,
    inner_iterations: int,
    projection_iterations: int,
    rhos: Optional[Sequence[float]] = None,
) -> Parafac2BState:
    """
    Double-split ADMM for the B_k of one PARAFAC2 dataset.

    Per slice: B_k[w D_k A^T A D_k + rho_k I] = w X_k^T A D_k
    + (rho_k/2)(Z_k - mu_k + P_k DeltaB - nu_k), then the prox on Z_k, the
    projection of {B_k + nu_k} onto the constant cross-product set, and the
    two dual steps.
    """
    K = len(slices)
    R = A.shape[1]
    AtA = A.T @ A
    grams = [weight * AtA * np.outer(C[k], C[k]) for k in range(K)]
    rhs = [weight * (X.T @ A) * C[k] for k, X in enumerate(slices)]
    if rhos is None:
        state.rhos = np.array([compute_step_size(g) for g in grams])
    else:
        state.rhos = np.asarray(rhos, dtype=np.float64)
    chos = [_factor(g + rho_k * np.eye(R)) for g, rho_k in zip(grams, state.rhos)]

    identity_prox = reg is None or reg.is_identity
    for _ in range(inner_iterations):
        constrained = state.constrained()
        for k in range(K):
            half = 0.5 * state.rhos[k]
            target = state.splits[k] - state.duals[k] + constrained[k] - state.constraint_duals[k]
            state.factors[k] = _solve_factored(chos[k], rhs[k] + half * target)
        for k in range(K):
            V = state.factors[k] + state.duals[k]
            state.splits[k] = V if identity_prox else prox_apply(reg, V, state.rhos[k])
        state.projections, state.blueprint = project_parafac2(
            [b + nu for b, nu in zip(state.factors, state.constraint_duals)],
            projection_iterations,
            weights=state.rhos,
            blueprint=state.blueprint,
        )
        constrained = state.constrained()
        for k in range(K):
            state.duals[k] = state.duals[k] + state.factors[k] - state.splits[k]
            state.constraint_duals[k] = state.constraint_duals[k] + state.factors[k] - constrained[k]
    check_finite("B mode", state.blueprint, *state.factors, *state.splits, *state.duals, *state.constraint_duals)
    return state


def c_mode_systems(
    slices: Sequence[np.ndarray], A: np.ndarray, B: Sequence[np.ndarray], weight: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-slice grams w (A^T A) * (B_k^T B_k) (K x R x R) and right-hand sides w diag(A^T X_k B_k)."""
    AtA = A.T @ A
    grams = np.stack([weight * AtA * (b.T @ b) for b in B])
    rhs = np.stack([weight * np.einsum("ir,ij,jr->r", A, X, b) for X, b in zip(slices, B)])
    return grams, rhs


def admm_c_mode(
    state: ModeState,
    slices: Sequence[np.ndarray],
    A: np.ndarray,
    B: Sequence[np.ndarray],
    reg: Optional[Regularizer],
    weight: float,
    inner_iterations: int,
    rho: Optional[float] = None,
) -> ModeState:
    """
    Rowwise ADMM for C: [w (A^T A) * (B_k^T B_k) + (rho/2) I] c_k = w diag(A^T X_k B_k) + (rho/2)(z_k - mu_k).

    One step size serves all rows: trace of the mean per-slice gram over R.
    """
    grams, rhs = c_mode_systems(slices, A, B, weight)
    rho = compute_step_size(grams.mean(axis=0)) if rho is None else float(rho)
    state.rho = rho
    R = A.shape[1]
    chos = [_factor(g + 0.5 * rho * np.eye(R)) for g in grams]
    for _ in range(inner_iterations):
        target = rhs + 0.5 * rho * (state.split - state.dual)
        state.factor = np.stack([linalg.cho_solve(cho, t) for cho, t in zip(chos, target)])
        _split_step(state, reg, rho)
    check_finite("C mode", state.factor, state.split, state.dual)
    return state


# ---------- least-squares systems ----------

def parafac2_first_mode_system(
    slices: Sequence[np.ndarray], B: Sequence[np.ndarray], C: np.ndarray, weight: float
) -> Tuple[np.ndarray, np.ndarray]:
    """w sum_k D_k B_k^T B_k D_k and w sum_k X_k B_k D_k."""
    R = C.shape[1]
    gram = np.zeros((R, R))
    rhs = np.zeros((slices[0].shape[0], R))
    for k, (X, b) in enumerate(zip(slices, B)):
        gram += (b.T @ b) * np.outer(C[k], C[k])
        rhs += (X @ b) * C[k]
    return weight * gram, weight * rhs


def matrix_mode_system(Y: np.ndarray, partner: np.ndarray, weight: float, transpose: bool) -> Tuple[np.ndarray, np.ndarray]:
    """System for E (``transpose=False``: w F^T F, w Y F) or F (w E^T E, w Y^T E)."""
    data = Y.T if transpose else Y
    return weight * (partner.T @ partner), weight * (data @ partner)


def cp_mode_system(Y: np.ndarray, factors: Sequence[np.ndarray], mode: int, weight: float) -> Tuple[np.ndarray, np.ndarray]:
    """Hadamard product of the other modes' grams and the mttkrp, both times w."""
    R = factors[0].shape[1]
    gram = np.ones((R, R))
    for n, f in enumerate(factors):
        if n != mode:
            gram = gram * (f.T @ f)
    return weight * gram, weight * tensor_ops.mttkrp(Y, tuple(factors), mode)
