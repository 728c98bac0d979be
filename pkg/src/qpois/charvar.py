"""Invariant trace-word functions and reduced brackets at representation points.

Functions here are callables on the list of factor matrices, transparent to
the dual-number lifts used for differentiation.  Trace words generate enough
invariants at desk scale; sums and products of them are plain Python
compositions.  The sampler solves the relator constraint by damped
Gauss-Newton over per-factor retractions, so class factors keep their
spectrum exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .duals import dexpm, dtrace
from .errors import MaxIters, NotInvariant, Stalled
from .fields import bracket_funcs, jacobiator
from .groupgeom import (
    SitePoint,
    conjugate_point,
    dual_lift,
    parse_word,
    random_point,
    word_eval,
    word_tangent,
)
from .liealg import random_algebra_element

__all__ = [
    "TraceFunction",
    "RepSample",
    "invariance_residual",
    "differential",
    "bracket",
    "hamiltonian_field",
    "level_tangency_residual",
    "dual_pair_residuals",
    "jacobi_invariants",
    "poisson_ideal_residual",
    "solve_relator",
]


class TraceFunction:
    """Trace of a word value: conjugation-invariant by construction."""

    def __init__(self, site, word):
        self.site = site
        self.word = parse_word(site, word) if isinstance(word, str) else tuple(word)

    def __call__(self, mats):
        return dtrace(word_eval(self.word, mats))

    def __repr__(self):
        letters = "".join(
            self.site.letter(f) if p == 1 else self.site.letter(f).upper()
            for f, p in self.word)
        return f"TraceFunction({letters!r})"


def invariance_residual(fn, point, rng, probes=4, scale=0.35):
    """Max |f(g p g^-1) - f(p)| over sampled group elements g."""
    site = point.site
    base = complex(fn(point.mats))
    worst = 0.0
    for _ in range(probes):
        xi = site.model.from_coeffs(random_algebra_element(site.model, rng, scale))
        moved = conjugate_point(point, dexpm(xi))
        worst = max(worst, abs(complex(fn(moved.mats)) - base))
    return worst


def differential(point, fn, frame=None):
    """Frame components of df at the point."""
    frame = frame or point.frame()
    out = np.zeros(frame.dim, dtype=complex)
    for a in range(frame.dim):
        out[a] = dual_lift(fn, point, frame.vector(a))
    return out


def bracket(biv, f, h, point):
    """Bracket {f, h}: full pairing of the bivector with df and dh."""
    return bracket_funcs(biv, point, f, h)


def hamiltonian_field(biv, f, point, seed=0, probes=4, check=True, tol=1e-8):
    """Tangent P-sharp(df) of an invariant function.

    The invariance precondition is sampled; a function that visibly varies
    under simultaneous conjugation is refused.
    """
    if check:
        resid = invariance_residual(f, point, np.random.default_rng(seed), probes)
        if resid > tol:
            raise NotInvariant(
                f"function varies under conjugation (residual {resid:.3e})")
    frame = point.frame()
    df = differential(point, f, frame)
    pmat = biv.frame_matrix(point, frame)
    return frame.assemble(pmat.T @ df)


def level_tangency_residual(desc, f, point, seed=0):
    """Max |d(word)(X_f)| over the descriptor's momentum words.

    The field of an invariant function is tangent to every momentum level.
    """
    xf = hamiltonian_field(desc.bivector, f, point, seed=seed)
    worst = 0.0
    for comp in desc.momentum:
        dphi = word_tangent(comp.word, point.mats, xf)
        worst = max(worst, float(np.abs(dphi).max()))
    return worst


def dual_pair_residuals(qp, qh, f, h, point):
    """Consistency of a dual bivector/2-form pair on invariant functions.

    Returns residuals of the gradient identity (flat of the field recovers
    df) and of the bracket tie  form(X_f, X_h) = dh . Pmat . df, stated at
    the single-contraction (matrix) level; against the full-pairing function
    bracket this reads  form(X_f, X_h) = {h, f} / 2.
    """
    frame = point.frame()
    pmat = qp.bivector.frame_matrix(point, frame)
    smat = qh.form.frame_matrix(point, frame)
    df = differential(point, f, frame)
    dh = differential(point, h, frame)
    xf = pmat.T @ df
    xh = pmat.T @ dh
    grad = float(np.abs(smat.T @ xf - df).max())
    tie = abs((xf @ smat @ xh) - (dh @ pmat @ df))
    return {"gradient": grad, "tie": float(tie)}


def jacobi_invariants(biv, f, h, k, points):
    """Max |Jacobiator(f, h, k)| over the points; zero on invariants."""
    worst = 0.0
    for p in points:
        worst = max(worst, abs(jacobiator(biv, p, f, h, k)))
    return float(worst)


def poisson_ideal_residual(biv, phi_word, target, f, points):
    """Max |{f, chi o word - chi(target)}| over level-set points.

    chi runs over traces of the first n matrix powers; these pullbacks cut
    out the conjugacy-class level set, and their brackets with invariants
    vanish along it.
    """
    site = biv.site
    if isinstance(phi_word, str):
        phi_word = parse_word(site, phi_word)
    target = np.asarray(target, dtype=complex)
    worst = 0.0
    for m in range(1, site.model.n + 1):
        cval = complex(np.trace(np.linalg.matrix_power(target, m)))

        def vanishing(mats, _m=m, _c=cval):
            w = word_eval(phi_word, mats)
            acc = w
            for _ in range(_m - 1):
                acc = acc @ w
            return dtrace(acc) - _c

        for pt in points:
            worst = max(worst, abs(bracket_funcs(biv, pt, f, vanishing)))
    return float(worst)


# ---------------------------------------------------------------------------
# Relator sampling (damped Gauss-Newton over per-factor retractions)
# ---------------------------------------------------------------------------

@dataclass
class RepSample:
    point: SitePoint
    residual: float
    target: np.ndarray
    iters: int


def _relator_gap(word, mats, target_inv):
    n = target_inv.shape[0]
    return word_eval(word, mats) @ target_inv - np.eye(n)


def _real_stack(m):
    flat = np.asarray(m).reshape(-1)
    return np.concatenate([flat.real, flat.imag])


def _apply_step(site, point, step):
    """One retraction per factor: right-translate group factors by exp(xi),
    conjugate class factors (and their conjugators) by exp(theta)."""
    model = site.model
    d = model.d
    mats = []
    conjs = []
    for i, fac in enumerate(site.factors):
        seg = step[2 * d * i:2 * d * (i + 1)]
        xi = model.from_coeffs(seg[0::2] + 1j * seg[1::2])
        g = dexpm(xi)
        if fac.kind == "group":
            mats.append(point.mats[i] @ g)
            conjs.append(None)
        else:
            gi = np.linalg.inv(g)
            mats.append(g @ point.mats[i] @ gi)
            k = point.conjs[i]
            conjs.append(g @ k if k is not None else g)
    return SitePoint(site, mats, conjs)


def solve_relator(site, word, target, seed=0, max_iters=200, tol=1e-10,
                  scale=0.35, start=None):
    """Sample a site point solving  word(p) = target  by damped Gauss-Newton.

    Parameters are per-factor algebra coefficients treated as independent
    real pairs; the residual is the stacked real/imaginary part of
    word(p) target^-1 - I.  Damping is multiplied by ten on a rejected step
    and divided by ten on an accepted one.
    """
    if isinstance(word, str):
        word = parse_word(site, word)
    target = np.asarray(target, dtype=complex)
    target_inv = np.linalg.inv(target)
    model = site.model
    d, n, nfac = model.d, model.n, site.nfac

    point = start if start is not None else random_point(
        site, np.random.default_rng(seed), scale)

    def sup_norm(p):
        return float(np.abs(_relator_gap(word, p.mats, target_inv)).max())

    current = sup_norm(point)
    mu = 1e-3
    npar = 2 * d * nfac
    for it in range(max_iters):
        if current <= tol:
            return RepSample(point, current, target, it)
        rvec = _real_stack(_relator_gap(word, point.mats, target_inv))
        cols = []
        for i, fac in enumerate(site.factors):
            q = point.mats[i]
            for b in model.basis:
                if fac.kind == "group":
                    v = q @ b
                else:
                    v = b @ q - q @ b
                comps = [None] * nfac
                comps[i] = v
                delta = (word_tangent(word, point.mats, comps)
                         @ target_inv).reshape(-1)
                cols.append(np.concatenate([delta.real, delta.imag]))
                cols.append(np.concatenate([-delta.imag, delta.real]))
        jmat = np.stack(cols, axis=1)
        accepted = False
        while mu < 1e14:
            lhs = np.vstack([jmat, np.sqrt(mu) * np.eye(npar)])
            rhs = np.concatenate([-rvec, np.zeros(npar)])
            step, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
            trial = _apply_step(site, point, step)
            trial_res = sup_norm(trial)
            if trial_res < current:
                point, current = trial, trial_res
                mu = max(mu / 10.0, 1e-14)
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            if current <= tol:
                return RepSample(point, current, target, it + 1)
            raise Stalled(
                f"no descent direction (residual {current:.3e})",
                best_residual=current, iters=it + 1)
    if current <= tol:
        return RepSample(point, current, target, max_iters)
    raise MaxIters(
        f"no convergence in {max_iters} iterations (residual {current:.3e})",
        best_residual=current, iters=max_iters)
