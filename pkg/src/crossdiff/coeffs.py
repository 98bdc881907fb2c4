"""Coefficient models for the triangular reaction-cross-diffusion class.

The system under study is

    u_t = div( p(v) u^alpha grad u ) + div( A12(u,v) grad v ) + R1(u,v)
    v_t = div( A22(u,v) grad v ) + R2(u,v)

with no-flux boundaries, alpha >= 0, p > 0, A22 bounded below by a positive
q(v), and reactions split as R_i(u,v) = u q_i(v) + R~_i(u,v).  The
structural smallness needed of A12, A22 and R~_i is the finite
(gamma,1)-Lipschitz property with gamma = 1 + alpha/2:

    |f(y1,z1) - f(y2,z2)| <= C(a1,a2) (|y1^gamma - y2^gamma| + |z1 - z2|)

on every box [0,a1] x [0,a2].  check_finite_gamma_lipschitz probes that
property by sampling; it is a heuristic, never a proof.

The module also carries the pointwise power inequalities the stability
estimate rests on: with D = (u1^(1+alpha) - u2^(1+alpha))(u1 - u2) >= 0,

    (u1^(1+alpha/2) - u2^(1+alpha/2))^2 <= (1+alpha/2)^2/(1+alpha) * D
    (u1^(1+alpha)   - u2^(1+alpha))^2   <= (1+alpha) M^alpha       * D

the latter for 0 <= u_i <= M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import exprs
from .exprs import Const, Expr, Var, evaluate, mul, neg, pow_

_STATE_VARS = frozenset(("u", "v"))


def _require_vars(name: str, e: Expr, allowed: frozenset) -> None:
    extra = exprs.variables(e) - allowed
    if extra:
        raise ValueError(
            f"{name} may only use {sorted(allowed)}; found {sorted(extra)}")


@dataclass(frozen=True)
class CoefficientModel:
    """Coefficients and split reactions; expressions in u and v only.

    p, q_lower, r1_linear and r2_linear depend on v alone; a12, a22 and the
    R~ parts may use u and v.  gamma = 1 + alpha/2 is the Lipschitz weight
    the degenerate diffusion exponent dictates.
    """

    alpha: float
    p: Expr
    a12: Expr
    a22: Expr
    q_lower: Expr
    r1_linear: Expr
    r1_tilde: Expr
    r2_linear: Expr
    r2_tilde: Expr

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        if not (self.alpha >= 0.0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be finite and nonnegative")
        for name in ("p", "q_lower", "r1_linear", "r2_linear"):
            _require_vars(name, getattr(self, name), frozenset(("v",)))
        for name in ("a12", "a22", "r1_tilde", "r2_tilde"):
            _require_vars(name, getattr(self, name), _STATE_VARS)

    @property
    def gamma(self) -> float:
        return 1.0 + 0.5 * self.alpha

    # pointwise evaluations (scalars or numpy arrays)

    def p_values(self, v):
        return evaluate(self.p, {"v": v})

    def a11_values(self, u, v):
        return self.p_values(v) * np.power(u, self.alpha)

    def a12_values(self, u, v):
        return evaluate(self.a12, {"u": u, "v": v})

    def a22_values(self, u, v):
        return evaluate(self.a22, {"u": u, "v": v})

    def q1_values(self, v):
        return evaluate(self.r1_linear, {"v": v})

    def q2_values(self, v):
        return evaluate(self.r2_linear, {"v": v})

    def r1_values(self, u, v):
        return u * self.q1_values(v) + evaluate(self.r1_tilde, {"u": u, "v": v})

    def r2_values(self, u, v):
        return u * self.q2_values(v) + evaluate(self.r2_tilde, {"u": u, "v": v})

    def check_positivity(self, u_max: float = 10.0, v_max: float = 10.0,
                         samples: int = 257) -> None:
        """Sampled structural checks: p > 0, q_lower > 0 and A22 >= q_lower
        on (0, u_max] x (0, v_max].  Raises ValueError listing violations."""
        vs = np.linspace(v_max / samples, v_max, samples)
        us = np.linspace(0.0, u_max, samples)
        problems = []
        if np.any(np.asarray(self.p_values(vs)) <= 0.0):
            problems.append(f"p(v) is not positive on (0, {v_max}]")
        q = np.asarray(evaluate(self.q_lower, {"v": vs}))
        if np.any(q <= 0.0):
            problems.append(f"q_lower(v) is not positive on (0, {v_max}]")
        uu, vv = np.meshgrid(us, vs, indexing="ij")
        a22 = np.broadcast_to(self.a22_values(uu, vv), uu.shape)
        qv = np.broadcast_to(evaluate(self.q_lower, {"v": vv}), uu.shape)
        if np.any(a22 < qv - 1e-12 * (1.0 + np.abs(qv))):
            problems.append("A22(u,v) drops below q_lower(v) on the sample box")
        if problems:
            raise ValueError("; ".join(problems))


def reaction_mismatch(m: CoefficientModel, r1_direct: Optional[Expr] = None,
                      r2_direct: Optional[Expr] = None, u_max: float = 10.0,
                      v_max: float = 10.0, samples: int = 64,
                      seed: int = 0) -> float:
    """Max |split reaction - directly supplied reaction| over random samples."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, u_max, samples)
    v = rng.uniform(0.0, v_max, samples)
    worst = 0.0
    if r1_direct is not None:
        direct = evaluate(r1_direct, {"u": u, "v": v})
        worst = max(worst, float(np.max(np.abs(m.r1_values(u, v) - direct))))
    if r2_direct is not None:
        direct = evaluate(r2_direct, {"u": u, "v": v})
        worst = max(worst, float(np.max(np.abs(m.r2_values(u, v) - direct))))
    return worst


# ---------------------------------------------------------------------------
# presets: nutrient-taxis family u_t = div(u v grad u) - div(chi u^beta v grad v) + f,
#          v_t = lap v - u v

_CASE_PARAMS = {
    1: ("chi", "beta"),
    2: ("chi", "beta", "l"),
    3: ("chi", "beta", "l"),
    4: ("chi", "beta"),
    5: ("chi", "beta", "l"),
    6: ("chi", "beta", "rho", "mu", "kappa"),
}
_BETA_OPEN_RANGE_CASES = (3, 5)  # beta in [3/2, 2); the others default to 2


def build_preset(case: int, params: Mapping[str, float]) -> CoefficientModel:
    """Nutrient-taxis presets: alpha = 1, p = v, A12 = -chi u^beta v,
    A22 = 1, R2 = -u v, and the per-case growth term

        1: f = u v      2: f = l u v    3: f = l u v  (beta in [3/2, 2))
        4: f = u - u^2  5: f = l u v  (beta in [3/2, 2))
        6: f = rho u - mu u^kappa  (kappa > 2)

    beta >= 3/2 is enforced (below it the cross term leaves the admissible
    Lipschitz class for gamma = 3/2); chi must be positive, l nonnegative.
    """
    if case not in _CASE_PARAMS:
        raise ValueError(f"unknown preset case {case}; valid cases are 1-6")
    allowed = _CASE_PARAMS[case]
    unknown = sorted(set(params) - set(allowed))
    if unknown:
        raise ValueError(f"unknown parameters for case {case}: {unknown}")

    def need(name: str) -> float:
        if name not in params:
            raise ValueError(f"case {case} needs parameter '{name}'")
        value = float(params[name])
        if not math.isfinite(value):
            raise ValueError(f"parameter '{name}' must be finite")
        return value

    chi = need("chi")
    if chi <= 0.0:
        raise ValueError("chi must be positive")
    beta = float(params.get("beta", 2.0)) if case not in _BETA_OPEN_RANGE_CASES \
        else need("beta")
    if beta < 1.5:
        raise ValueError(f"beta = {beta} is below 3/2; the cross-diffusion "
                         "term would leave the admissible class")
    if case in _BETA_OPEN_RANGE_CASES and not beta < 2.0:
        raise ValueError(f"case {case} needs beta in [3/2, 2)")

    u, v = Var("u"), Var("v")
    if case in (1, 2, 3, 5):
        l = 1.0 if case == 1 else need("l")
        if l < 0.0:
            raise ValueError("l must be nonnegative")
        r1_linear = mul(Const(l), v)
        r1_tilde = Const(0.0)
    elif case == 4:
        r1_linear = Const(1.0)
        r1_tilde = neg(pow_(u, Const(2.0)))
    else:
        rho, mu, kappa = need("rho"), need("mu"), need("kappa")
        if mu <= 0.0:
            raise ValueError("mu must be positive")
        if not kappa > 2.0:
            raise ValueError("kappa must exceed 2")
        r1_linear = Const(rho)
        r1_tilde = neg(mul(Const(mu), pow_(u, Const(kappa))))

    return CoefficientModel(
        alpha=1.0,
        p=v,
        a12=neg(mul(mul(Const(chi), pow_(u, Const(beta))), v)),
        a22=Const(1.0),
        q_lower=Const(1.0),
        r1_linear=r1_linear,
        r1_tilde=r1_tilde,
        r2_linear=neg(v),
        r2_tilde=Const(0.0),
    )


# ---------------------------------------------------------------------------
# pointwise inequalities

def dissipation_density(u1, u2, alpha: float):
    """(u1^(1+alpha) - u2^(1+alpha)) (u1 - u2), the degenerate-diffusion
    dissipation density; nonnegative for u_i >= 0 since both factors share
    the sign of u1 - u2."""
    e = 1.0 + alpha
    return (np.power(u1, e) - np.power(u2, e)) * (u1 - u2)


def power_gap_inequality_check(u1, u2, alpha: float, rel_tol: float = 1e-12):
    """Check (u1^(1+a/2) - u2^(1+a/2))^2 <= (1+a/2)^2/(1+a) * D.

    The constant is sharp (Cauchy-Schwarz in the segment parametrization of
    the power gap against the dissipation density).  Returns (lhs, rhs,
    holds), elementwise for array input.
    """
    half = 1.0 + 0.5 * alpha
    gap = np.power(u1, half) - np.power(u2, half)
    lhs = gap * gap
    rhs = (half * half / (1.0 + alpha)) * dissipation_density(u1, u2, alpha)
    holds = lhs <= rhs + rel_tol * (1.0 + np.abs(rhs))
    return lhs, rhs, holds


def mean_power_bounds_check(u1, u2, alpha: float, m_bound: float,
                            rel_tol: float = 1e-12):
    """Check (u1^(1+a) - u2^(1+a))^2 <= (1+a) M^a * D for 0 <= u_i <= M.
    Returns elementwise booleans."""
    e = 1.0 + alpha
    gap = np.power(u1, e) - np.power(u2, e)
    lhs = gap * gap
    rhs = e * (m_bound ** alpha) * dissipation_density(u1, u2, alpha)
    return lhs <= rhs + rel_tol * (1.0 + np.abs(rhs))


# ---------------------------------------------------------------------------
# Lipschitz sampling

@dataclass(frozen=True)
class LipschitzVerdict:
    """Outcome of the sampling probe.  verdict is 'plausible' or
    'diverging', never a proof either way."""

    gamma: float
    box: tuple
    estimated_constant: float
    max_ratio_trace: tuple  # ((separation scale, max ratio), ...)
    verdict: str
    witness_pair: tuple     # ((y1, z1), (y2, z2))


_SCALES = tuple(10.0 ** -k for k in range(8))
_GROWTH_FACTOR = 9.5      # flag >= 10x growth per decade, minus sampling slack
_GROWTH_RUN = 3           # over at least 3 consecutive scale reductions


def check_finite_gamma_lipschitz(f: Expr, gamma: float, a1: float, a2: float,
                                 budget: int = 20000,
                                 seed: int = 0) -> LipschitzVerdict:
    """Probe |f(p1) - f(p2)| <= C (|y1^g - y2^g| + |z1 - z2|) on
    [0,a1] x [0,a2] by sampling.

    f is an expression in (y, v) - equivalently (u, v): y and u both name
    the first, power-weighted argument, v the second.  Pairs are drawn at
    separation scales 1, 1e-1, ..., 1e-7 (plus broad random pairs and
    degenerate-corner pairs (y, z) vs (0, z)); the verdict flips to
    'diverging' when the per-scale max ratio grows by at least a factor 10
    per tenfold separation reduction over 3 consecutive reductions, or when
    evaluation overflows.  A heuristic: 'plausible' is not a proof.
    """
    if not (gamma > 0.0 and math.isfinite(gamma)):
        raise ValueError("gamma must be positive")
    if not (a1 > 0.0 and a2 > 0.0):
        raise ValueError("the box must have positive side lengths")
    if budget < 1000:
        raise ValueError("budget below 1000 samples is meaningless")
    _require_vars("f", f, frozenset(("y", "u", "v")))

    def values(y, z):
        try:
            out = evaluate(f, {"y": y, "u": y, "v": z})
        except exprs.EvalError:
            # domain failure somewhere in the batch: evaluate pointwise and
            # mark failing pairs, which the overflow path reports as diverging
            out = np.empty(np.shape(y))
            for i in range(out.size):
                try:
                    out.flat[i] = evaluate(
                        f, {"y": y.flat[i], "u": y.flat[i], "v": z.flat[i]})
                except exprs.EvalError:
                    out.flat[i] = np.nan
            return out
        return np.broadcast_to(out, np.shape(y)).astype(float)

    rng = np.random.default_rng(seed)
    best_ratio = 0.0
    witness = ((0.0, 0.0), (0.0, 0.0))
    overflow_witness = None
    trace = []

    def scan(y1, z1, y2, z2):
        nonlocal best_ratio, witness, overflow_witness
        f1, f2 = values(y1, z1), values(y2, z2)
        bad = ~(np.isfinite(f1) & np.isfinite(f2))
        if np.any(bad) and overflow_witness is None:
            i = int(np.argmax(bad))
            overflow_witness = ((float(y1[i]), float(z1[i])),
                                (float(y2[i]), float(z2[i])))
        denom = np.abs(np.power(y1, gamma) - np.power(y2, gamma)) \
            + np.abs(z1 - z2)
        ok = (denom > 0.0) & ~bad
        if not np.any(ok):
            return 0.0
        ratio = np.abs(f1[ok] - f2[ok]) / denom[ok]
        i = int(np.argmax(ratio))
        local_best = float(ratio[i])
        if local_best > best_ratio:
            best_ratio = local_best
            yy1, zz1 = y1[ok], z1[ok]
            yy2, zz2 = y2[ok], z2[ok]
            witness = ((float(yy1[i]), float(zz1[i])),
                       (float(yy2[i]), float(zz2[i])))
        return local_best

    n_broad = budget // 2
    scan(rng.uniform(0.0, a1, n_broad), rng.uniform(0.0, a2, n_broad),
         rng.uniform(0.0, a1, n_broad), rng.uniform(0.0, a2, n_broad))

    per_scale = max(64, budget // (2 * len(_SCALES)))
    zs_corner = np.array([0.0, 0.5 * a2, a2])
    corner_ratios = []
    for scale in _SCALES:
        # every pair at this trace entry is separated by ~ scale in exactly
        # one coordinate; half the base points sweep the box for interior
        # kinks, half crowd the degenerate corner y = 0, where a ratio that
        # blows up like a power of the separation betrays a diverging f
        sep = scale * rng.uniform(0.5, 1.0, per_scale)
        interior = np.maximum(0.0, 1.0 - sep) * rng.random(per_scale)
        corner = sep * rng.random(per_scale)
        y1 = a1 * np.where(rng.random(per_scale) < 0.5, interior, corner)
        y2 = np.minimum(y1 + a1 * sep, a1)
        z1 = rng.uniform(0.0, a2, per_scale)
        move_z = rng.random(per_scale) < 0.5
        zsep = a2 * scale * rng.uniform(0.5, 1.0, per_scale)
        z2 = np.where(move_z, np.minimum(z1 + zsep, a2), z1)
        y2 = np.where(move_z, y1, y2)
        best_here = scan(y1, z1, y2, z2)
        # corner pairs (scale*a1, z) vs (0, z), z held fixed
        yc = np.full_like(zs_corner, scale * a1)
        best_corner = scan(yc, zs_corner, np.zeros_like(yc), zs_corner)
        corner_ratios.append(best_corner)
        trace.append((scale, max(best_here, best_corner)))

    if overflow_witness is not None:
        return LipschitzVerdict(gamma, (a1, a2), float("inf"), tuple(trace),
                                "diverging", overflow_witness)

    # the corner ladder is deterministic, so a corner singularity shows as a
    # clean growth run there even when random-pair spikes jitter the maxima
    diverging = (_has_growth_run([r for _, r in trace])
                 or _has_growth_run(corner_ratios))
    return LipschitzVerdict(gamma, (a1, a2), best_ratio, tuple(trace),
                            "diverging" if diverging else "plausible", witness)


def _has_growth_run(ratios) -> bool:
    for k in range(len(ratios) - _GROWTH_RUN):
        if all(ratios[k + j + 1] >= _GROWTH_FACTOR * ratios[k + j] > 0.0
               for j in range(_GROWTH_RUN)):
            return True
    return False
