"""
Parametral Tuning
Required integrals psi, the closed-form minimizer of the velocity-deviation
functional over log-rate paths c(theta), its stationarity check and the
reconstruction of the weights b(theta) from c.
"""

import logging
from typing import Sequence, Union

import numpy as np

from .exceptions import HomotopyInfeasibleError, OptvoError, WeightOverflowError
from .linalg import SPDFactor
from .models import GammaMatrix, ParametricPath, PsiVector, ThetaGrid

logger = logging.getLogger(__name__)

GammaStack = Union[np.ndarray, Sequence[GammaMatrix]]


def _stack(gammas: GammaStack) -> np.ndarray:
    if isinstance(gammas, np.ndarray):
        return gammas
    return np.stack([g.matrix if isinstance(g, GammaMatrix) else np.asarray(g) for g in gammas])


def psi_from_endpoints(p0: Sequence[float], ptau: Sequence[float]) -> PsiVector:
    """psi_m = log(ptau_m / p0_m); every ratio must be positive"""
    p0 = np.asarray(p0, dtype=float)
    ptau = np.asarray(ptau, dtype=float)
    if p0.shape != ptau.shape:
        raise ValueError(f"endpoint weights differ in shape: {p0.shape} vs {ptau.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = ptau / p0
    bad = np.flatnonzero(~np.isfinite(ratio) | (ratio <= 0))
    if bad.size:
        raise HomotopyInfeasibleError(
            "weights cannot change sign or vanish along b_m = p0_m exp(integral of c_m)",
            agents=bad,
        )
    return PsiVector(np.log(ratio))


def init_c(grid: ThetaGrid, psi: PsiVector, decay: float = 0.0) -> ParametricPath:
    """
    Starting log-rates whose trapezoid integral equals psi.

    decay = 0 gives the constant rates c_m = psi_m / tau. A positive decay gives
    c_m(theta) proportional to psi_m exp(-decay theta / tau), which front-loads
    the weight change and bends the first predicted path.
    """
    if decay < 0:
        raise ValueError(f"decay must be >= 0, got {decay}")
    if decay == 0:
        return ParametricPath(values=np.tile(psi.psi / grid.tau, (grid.L + 1, 1)), grid=grid)
    profile = np.exp(-decay * grid.nodes / grid.tau)
    profile /= grid.trapezoid_weights() @ profile
    return ParametricPath(values=np.outer(profile, psi.psi), grid=grid)


def tune(
    gammas: GammaStack,
    m_hat: np.ndarray,
    psi: PsiVector,
    mu: float,
    grid: ThetaGrid,
) -> ParametricPath:
    """
    Closed-form minimizer c = Pi^{-1} (Gamma^T m_hat - lambda) with Pi = Gamma^T Gamma + mu I.

    The multiplier solves (int Pi^{-1}) lambda = int Pi^{-1} Gamma^T m_hat - psi with the
    trapezoid weights of the grid, so the trapezoid integral of c equals psi.

    Args:
        gammas: Gamma at every node, shape (L+1, N*M, M)
        m_hat: Mean velocity of the last prediction
        psi: Required integrals
        mu: Smoothness regularizer (> 0)
        grid: Theta grid of the prediction

    Returns:
        Tuned ParametricPath carrying its multiplier
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    stack = _stack(gammas)
    if stack.shape[0] != grid.L + 1:
        raise ValueError(f"need Gamma at {grid.L + 1} nodes, got {stack.shape[0]}")
    bad = np.flatnonzero(~np.all(np.isfinite(stack), axis=(1, 2)))
    if bad.size:
        raise OptvoError("Gamma has non-finite entries", nodes=bad.tolist())
    M = stack.shape[2]
    m_hat = np.asarray(m_hat, dtype=float)
    weights = grid.trapezoid_weights()
    eye = np.eye(M)

    r = np.empty((grid.L + 1, M))
    P = np.empty((grid.L + 1, M, M))
    for j, gamma in enumerate(stack):
        pi = gamma.T @ gamma + mu * eye
        sol = SPDFactor(pi, "pi").solve(np.column_stack([gamma.T @ m_hat, eye]))
        r[j] = sol[:, 0]
        P[j] = sol[:, 1:]

    integral_P = np.einsum("j,jab->ab", weights, P)
    integral_r = weights @ r
    lam = SPDFactor(0.5 * (integral_P + integral_P.T), "pi_integral").solve(integral_r - psi.psi)
    values = r - np.einsum("jab,b->ja", P, lam)
    logger.debug("Tuned c on %d nodes, |lambda|=%.3e", grid.L + 1, np.linalg.norm(lam))
    return ParametricPath(values=values, grid=grid, multiplier=lam)


def stationarity_residual(
    c: ParametricPath,
    gammas: GammaStack,
    m_hat: np.ndarray,
    mu: float,
    lam: np.ndarray,
) -> float:
    """max_j ||Gamma_j^T (Gamma_j c_j - m_hat) + mu c_j + lambda||"""
    stack = _stack(gammas)
    deviation = np.einsum("jab,jb->ja", stack, c.values) - m_hat
    lhs = np.einsum("jab,ja->jb", stack, deviation) + mu * c.values + lam
    return float(np.linalg.norm(lhs, axis=1).max())


def j2_objective(c: ParametricPath, gammas: GammaStack, m_hat: np.ndarray, mu: float) -> float:
    """Trapezoid value of (1/2) int ||Gamma c - m_hat||^2 + mu ||c||^2 dtheta"""
    stack = _stack(gammas)
    deviation = np.einsum("jab,jb->ja", stack, c.values) - m_hat
    integrand = np.sum(deviation ** 2, axis=1) + mu * np.sum(c.values ** 2, axis=1)
    return float(0.5 * c.grid.trapezoid_weights() @ integrand)


def reconstruct_b(c: ParametricPath, p0: Sequence[float]) -> np.ndarray:
    """b_m(theta_j) = p0_m exp(cumulative trapezoid of c_m), shape (L+1, M)"""
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (c.M,):
        raise ValueError(f"p0 must have length {c.M}")
    with np.errstate(over="ignore"):
        b = p0 * np.exp(c.cumulative())
    overflow = ~np.isfinite(b)
    if np.any(overflow):
        nodes, agents = np.nonzero(overflow)
        raise WeightOverflowError(
            "reconstructed weights overflowed",
            node=int(nodes[0]),
            agents=sorted(set(agents.tolist())),
        )
    return b
