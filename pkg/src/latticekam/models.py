"""Tonelli Hamiltonians, the built-in model zoo, and analytic scheme bounds.

Every evaluator is vectorised: ``x`` has shape (n, d), ``t`` is a scalar or
shape (n,), ``p``/``zeta`` have shape (n, d).  Scalars come back with shape
(n,), gradients (n, d) and Hessians (n, d, d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument, ModelNotTonelli
from .grid import GridSpec

TWO_PI = 2.0 * math.pi


def _bcast_t(t, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(t, dtype=float), (n,))


# --------------------------------------------------------------------------
# potentials
# --------------------------------------------------------------------------


class Potential:
    autonomous: bool = True

    def value(self, x, t) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x, t) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x, t) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class TrigTerm:
    amplitude: float
    wave: tuple[int, ...]
    freq: int = 0
    phase: float = 0.0


class TrigPotential(Potential):
    """V(x, t) = sum_j a_j cos(2 pi (k_j . x + n_j t) + phi_j)."""

    def __init__(self, d: int, terms: Sequence[TrigTerm]):
        self.d = d
        self.terms = tuple(terms)
        for term in self.terms:
            if len(term.wave) != d:
                raise InvalidArgument(f"wave vector {term.wave} does not have dimension {d}")
        self.autonomous = all(term.freq == 0 for term in self.terms)
        self._a = np.array([t.amplitude for t in self.terms], dtype=float)
        self._k = np.array([t.wave for t in self.terms], dtype=float).reshape(len(self.terms), d)
        self._n = np.array([t.freq for t in self.terms], dtype=float)
        self._phi = np.array([t.phase for t in self.terms], dtype=float)

    @classmethod
    def from_table(cls, d: int, rows) -> "TrigPotential":
        """Rows of (amplitude, wave, [freq, [phase]]) or dicts with those keys."""
        terms = []
        for row in rows:
            if isinstance(row, dict):
                terms.append(
                    TrigTerm(
                        float(row["amplitude"]),
                        tuple(int(k) for k in row["wave"]),
                        int(row.get("freq", 0)),
                        float(row.get("phase", 0.0)),
                    )
                )
            else:
                a, k, *rest = row
                terms.append(TrigTerm(float(a), tuple(int(v) for v in k), *rest))
        return cls(d, terms)

    def _arg(self, x, t):
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        t = _bcast_t(t, x.shape[0])
        return TWO_PI * (x @ self._k.T + np.outer(t, self._n)) + self._phi

    def value(self, x, t):
        if not self.terms:
            return np.zeros(np.asarray(x).reshape(-1, self.d).shape[0])
        return np.cos(self._arg(x, t)) @ self._a

    def grad(self, x, t):
        if not self.terms:
            return np.zeros(np.asarray(x, dtype=float).reshape(-1, self.d).shape)
        s = -np.sin(self._arg(x, t)) * self._a
        return TWO_PI * s @ self._k

    def hess(self, x, t):
        n = np.asarray(x).reshape(-1, self.d).shape[0]
        if not self.terms:
            return np.zeros((n, self.d, self.d))
        c = -np.cos(self._arg(x, t)) * self._a
        kk = np.einsum("ji,jl->jil", self._k, self._k)
        return TWO_PI**2 * np.einsum("nj,jil->nil", c, kk)


class ShiftedPotential(Potential):
    """V(x - s sin(2 pi t) (1, ..., 1)) for an autonomous base potential V."""

    autonomous = False

    def __init__(self, base: Potential, amplitude: float):
        self.base = base
        self.d = base.d
        self.amplitude = float(amplitude)

    def _shifted(self, x, t):
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        t = _bcast_t(t, x.shape[0])
        return x - (self.amplitude * np.sin(TWO_PI * t))[:, None]

    def value(self, x, t):
        return self.base.value(self._shifted(x, t), 0.0)

    def grad(self, x, t):
        return self.base.grad(self._shifted(x, t), 0.0)

    def hess(self, x, t):
        return self.base.hess(self._shifted(x, t), 0.0)


# --------------------------------------------------------------------------
# Hamiltonian models
# --------------------------------------------------------------------------


class HamiltonianModel:
    """A Tonelli pair (H, L) on T^d x T x R^d.

    Subclasses supply H, H_p, L and L_zeta.  Second derivatives default to
    central finite differences of the first derivatives.
    """

    name: str = "custom"
    d: int = 1
    autonomous: bool = True
    lambda1_model: float | None = None
    fd_step: float = 1e-5

    def H(self, x, t, p) -> np.ndarray:
        raise NotImplementedError

    def H_p(self, x, t, p) -> np.ndarray:
        raise NotImplementedError

    def L(self, x, t, zeta) -> np.ndarray:
        raise NotImplementedError

    def L_zeta(self, x, t, zeta) -> np.ndarray:
        raise NotImplementedError

    def L_c(self, x, t, zeta, c) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=float).reshape(-1, self.d)
        return self.L(x, t, zeta) - zeta @ np.asarray(c, dtype=float).reshape(self.d)

    def _fd(self, f, x, t, p, wrt: str) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        p = np.asarray(p, dtype=float).reshape(-1, self.d)
        eps = self.fd_step
        out = np.empty((x.shape[0], self.d, self.d))
        for i in range(self.d):
            e = np.zeros(self.d)
            e[i] = eps
            if wrt == "x":
                fp, fm = f(x + e, t, p), f(x - e, t, p)
            else:
                fp, fm = f(x, t, p + e), f(x, t, p - e)
            out[:, i, :] = (fp - fm) / (2 * eps)
        return out

    def H_x(self, x, t, p) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        eps = self.fd_step
        out = np.empty_like(x)
        for i in range(self.d):
            e = np.zeros(self.d)
            e[i] = eps
            out[:, i] = (self.H(x + e, t, p) - self.H(x - e, t, p)) / (2 * eps)
        return out

    def H_pp(self, x, t, p) -> np.ndarray:
        return self._fd(self.H_p, x, t, p, "p")

    def H_xp(self, x, t, p) -> np.ndarray:
        """Entry [i, j] = d^2 H / dx^i dp^j."""
        return self._fd(self.H_p, x, t, p, "x")

    def H_xx(self, x, t, p) -> np.ndarray:
        return self._fd(self.H_x, x, t, p, "x")

    def L_x(self, x, t, zeta) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        eps = self.fd_step
        out = np.empty_like(x)
        for i in range(self.d):
            e = np.zeros(self.d)
            e[i] = eps
            out[:, i] = (self.L(x + e, t, zeta) - self.L(x - e, t, zeta)) / (2 * eps)
        return out

    def describe(self) -> dict:
        return {"name": self.name, "d": self.d, "autonomous": self.autonomous}


class MechanicalModel(HamiltonianModel):
    """H = |p|^2/2 + V(x, t), L = |zeta|^2/2 - V(x, t)."""

    def __init__(self, potential: Potential, name: str = "mechanical", params: dict | None = None):
        self.potential = potential
        self.d = potential.d
        self.name = name
        self.autonomous = potential.autonomous
        self.params = dict(params or {})

    def H(self, x, t, p):
        p = np.asarray(p, dtype=float).reshape(-1, self.d)
        return 0.5 * np.sum(p * p, axis=1) + self.potential.value(x, t)

    def H_p(self, x, t, p):
        return np.array(np.asarray(p, dtype=float).reshape(-1, self.d))

    def L(self, x, t, zeta):
        zeta = np.asarray(zeta, dtype=float).reshape(-1, self.d)
        return 0.5 * np.sum(zeta * zeta, axis=1) - self.potential.value(x, t)

    def L_zeta(self, x, t, zeta):
        return np.array(np.asarray(zeta, dtype=float).reshape(-1, self.d))

    def H_x(self, x, t, p):
        return self.potential.grad(x, t)

    def L_x(self, x, t, zeta):
        return -self.potential.grad(x, t)

    def H_pp(self, x, t, p):
        n = np.asarray(p).reshape(-1, self.d).shape[0]
        return np.broadcast_to(np.eye(self.d), (n, self.d, self.d)).copy()

    def H_xp(self, x, t, p):
        n = np.asarray(p).reshape(-1, self.d).shape[0]
        return np.zeros((n, self.d, self.d))

    def H_xx(self, x, t, p):
        return self.potential.hess(x, t)

    def describe(self) -> dict:
        out = super().describe()
        out["params"] = self.params
        return out


class CallableModel(HamiltonianModel):
    """Model assembled from user callables; used for non-mechanical Hamiltonians."""

    def __init__(
        self,
        d: int,
        H: Callable,
        H_p: Callable,
        L: Callable,
        L_zeta: Callable,
        *,
        name: str = "custom",
        autonomous: bool = True,
        lambda1: float | None = None,
    ):
        self.d = d
        self._H, self._H_p, self._L, self._L_zeta = H, H_p, L, L_zeta
        self.name = name
        self.autonomous = autonomous
        self.lambda1_model = lambda1

    def H(self, x, t, p):
        return self._H(np.asarray(x, float).reshape(-1, self.d), t, np.asarray(p, float).reshape(-1, self.d))

    def H_p(self, x, t, p):
        return self._H_p(np.asarray(x, float).reshape(-1, self.d), t, np.asarray(p, float).reshape(-1, self.d))

    def L(self, x, t, zeta):
        return self._L(np.asarray(x, float).reshape(-1, self.d), t, np.asarray(zeta, float).reshape(-1, self.d))

    def L_zeta(self, x, t, zeta):
        return self._L_zeta(
            np.asarray(x, float).reshape(-1, self.d), t, np.asarray(zeta, float).reshape(-1, self.d)
        )


BUILTIN_MODELS = ("free", "mechanical-1d", "mechanical-2d", "shifted-pendulum-nonautonomous")


def builtin_model(name: str, d: int | None = None, **params) -> HamiltonianModel:
    """Look up a model of the zoo by name.

    ``free`` takes ``d`` (default 1).  ``mechanical-1d`` uses V = a cos(2 pi x),
    ``mechanical-2d`` uses V = a cos(2 pi x1) cos(2 pi x2) and the
    non-autonomous pendulum uses V = a cos(2 pi (x - s sin(2 pi t))) with
    ``amplitude`` a (default 1) and ``shift`` s (default 0.25).
    """
    a = float(params.pop("amplitude", 1.0))
    if name == "free":
        dim = 1 if d is None else int(d)
        model = MechanicalModel(TrigPotential(dim, []), name="free")
    elif name == "mechanical-1d":
        model = MechanicalModel(TrigPotential(1, [TrigTerm(a, (1,))]), name=name, params={"amplitude": a})
    elif name == "mechanical-2d":
        terms = [TrigTerm(0.5 * a, (1, 1)), TrigTerm(0.5 * a, (1, -1))]
        model = MechanicalModel(TrigPotential(2, terms), name=name, params={"amplitude": a})
    elif name == "shifted-pendulum-nonautonomous":
        s = float(params.pop("shift", 0.25))
        dim = 1 if d is None else int(d)
        base = TrigPotential(dim, [TrigTerm(a, tuple(1 if i == j else 0 for i in range(dim))) for j in range(dim)])
        model = MechanicalModel(ShiftedPotential(base, s), name=name, params={"amplitude": a, "shift": s})
    elif name == "trig":
        dim = 1 if d is None else int(d)
        rows = params.pop("terms")
        model = MechanicalModel(TrigPotential.from_table(dim, rows), name="trig", params={"terms": rows})
    else:
        raise InvalidArgument(f"unknown model {name!r}; choose from {BUILTIN_MODELS + ('trig',)}")
    if params:
        raise InvalidArgument(f"unused model parameters: {sorted(params)}")
    if d is not None and model.d != d:
        raise InvalidArgument(f"model {name!r} has dimension {model.d}, not {d}")
    return model


def legendre_defect(model: HamiltonianModel, x, t, p) -> np.ndarray:
    """H(x,t,p) - (p . zeta* - L(x,t,zeta*)) at zeta* = H_p(x,t,p)."""
    p = np.asarray(p, dtype=float).reshape(-1, model.d)
    z = model.H_p(x, t, p)
    return model.H(x, t, p) - (np.sum(p * z, axis=1) - model.L(x, t, z))


# --------------------------------------------------------------------------
# scheme bounds
# --------------------------------------------------------------------------


def as_box(P, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalise a c-box: scalar half-width, (lo, hi) pair, or arrays."""
    if np.isscalar(P):
        w = abs(float(P))
        return np.full(d, -w), np.full(d, w)
    lo, hi = P
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,)).copy()
    if np.any(hi < lo):
        raise InvalidArgument(f"empty c-box {lo}..{hi}")
    return lo, hi


def _box_samples(lo, hi, n: int) -> np.ndarray:
    axes = [np.linspace(a, b, n) if b > a else np.array([a]) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _xt_samples(d: int, autonomous: bool, n: int) -> tuple[np.ndarray, np.ndarray]:
    per_axis = n if d <= 2 else max(4, int(round(n ** (2.0 / d))))
    xs = _box_samples(np.zeros(d), np.full(d, 1.0 - 1.0 / per_axis), per_axis)
    ts = np.zeros(1) if autonomous else np.arange(n) / n
    X = np.repeat(xs, ts.size, axis=0)
    T = np.tile(ts, xs.shape[0])
    return X, T


def _max_over(model_fn, X, T, Q, reducer, chunk: int = 1 << 16):
    """Reduce model_fn over the product of (X, T) pairs and Q samples."""
    best = None
    nq = Q.shape[0]
    step = max(1, chunk // max(nq, 1))
    for s in range(0, X.shape[0], step):
        xs = np.repeat(X[s : s + step], nq, axis=0)
        ts = np.repeat(T[s : s + step], nq)
        qs = np.tile(Q, (min(step, X.shape[0] - s), 1))
        val = reducer(model_fn(xs, ts, qs))
        best = val if best is None else (max(best, val) if reducer is not _min_eig else min(best, val))
    return float(best)


def _abs_max(a):
    return float(np.max(np.abs(a)))


def _min_eig(a):
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    return float(np.min(np.linalg.eigvalsh(a)))


def _safe_div(num: float, den: float) -> float:
    if den == 0.0:
        return math.inf if num > 0 else (0.0 if num == 0 else -math.inf)
    return num / den


@dataclass(frozen=True)
class SchemeBounds:
    d: int
    r: float
    P: tuple[np.ndarray, np.ndarray]
    lambda1: float
    u_star: float
    Hp_star: float
    Hxx_star: float
    Hxp_star: float
    Hpp_star: float
    M_plus: float
    M_minus: float
    eta_star: float
    beta1: float
    beta_tilde: float
    meta: dict = field(default_factory=dict)

    @property
    def cfl_cap(self) -> float:
        """Control cap (d * lambda1)^-1."""
        return 1.0 / (self.d * self.lambda1)

    def M(self, t):
        """Semiconcavity envelope; decreasing in t with limit M_plus."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise InvalidArgument("M(t) is defined for t > 0 only")
        if self.eta_star == 0.0:
            out = self.M_plus + 1.0 / (self.Hpp_star * t)
        else:
            out = self.M_plus + self.eta_star / np.expm1(self.eta_star * self.Hpp_star * t)
        return out if out.ndim else float(out)

    def lambda_conditions(self, tau: float) -> list[tuple[str, float]]:
        d, r = self.d, self.r
        return [
            (
                "lam <= (1 - 2d Hxp tau) / (2d r Hpp + d Hp)",
                _safe_div(1 - 2 * d * self.Hxp_star * tau, 2 * d * r * self.Hpp_star + d * self.Hp_star),
            ),
            ("lam <= 1 / (10 r Hpp)", _safe_div(1.0, 10 * r * self.Hpp_star)),
        ]

    def tau_conditions(self, lam: float) -> list[tuple[str, float]]:
        d = self.d
        root = math.sqrt((1 + d) * self.Hxp_star**2 + self.Hpp_star * self.Hxx_star)
        return [
            ("tau < 1 / (2d Hxp)", _safe_div(1.0, 2 * d * self.Hxp_star)),
            (
                "tau < (1 - d lam Hp) / (2d (Hpp M+ + Hxp))",
                _safe_div(1 - d * lam * self.Hp_star, 2 * d * (self.Hpp_star * self.M_plus + self.Hxp_star)),
            ),
            ("tau < 1 / (Hpp (M+ - M-))", _safe_div(1.0, self.Hpp_star * (self.M_plus - self.M_minus))),
            ("tau < log 2 / (eta Hpp)", _safe_div(math.log(2.0), self.eta_star * self.Hpp_star)),
            ("tau < 1 / (4 sqrt((1+d) Hxp^2 + Hpp Hxx))", _safe_div(1.0, 4 * root)),
        ]

    def lambda_max(self, tau: float) -> float:
        return min(v for _, v in self.lambda_conditions(tau))

    def tau_max(self, lam: float) -> float:
        return min(v for _, v in self.tau_conditions(lam))

    def as_dict(self) -> dict:
        out = {
            k: getattr(self, k)
            for k in (
                "d r lambda1 u_star Hp_star Hxx_star Hxp_star Hpp_star M_plus M_minus eta_star beta1 beta_tilde".split()
            )
        }
        out["P"] = [self.P[0].tolist(), self.P[1].tolist()]
        out["cfl_cap"] = self.cfl_cap
        return out


def compute_bounds(
    model: HamiltonianModel,
    r: float,
    P,
    d: int | None = None,
    *,
    n_samples: int = 64,
    n_momentum: int = 17,
    lambda1: float | None = None,
    beta1: float | None = None,
) -> SchemeBounds:
    """Sample the extremal constants that enter the step-size conditions.

    ``lambda1`` defaults to the model's declared cap, else to
    1 / (d max |H_p(x, t, c + u)|_inf) over c in P and |u|_inf <= r.
    ``beta1`` (a bound on minimising velocities over unit time) defaults to
    the control cap (d lambda1)^-1.
    """
    d = model.d if d is None else d
    if d != model.d:
        raise InvalidArgument(f"model dimension {model.d} does not match d={d}")
    if r <= 0:
        raise InvalidArgument("slope bound r must be positive")
    lo, hi = as_box(P, d)
    X, T = _xt_samples(d, model.autonomous, n_samples)

    def inf_norm_max(fn, Q):
        return _max_over(lambda x, t, q: np.max(np.abs(fn(x, t, q)), axis=1), X, T, Q, np.max)

    if lambda1 is None:
        lambda1 = model.lambda1_model
    if lambda1 is None:
        Q = _box_samples(lo - r, hi + r, n_momentum)
        lambda1 = 1.0 / (d * inf_norm_max(model.H_p, Q))
    cap = 1.0 / (d * lambda1)

    Z = _box_samples(np.full(d, -cap), np.full(d, cap), n_momentum)
    # |L_zeta - c|_inf is maximised at a corner of the c-box
    corners = _box_samples(lo, hi, 2)
    u_star = max(inf_norm_max(lambda x, t, z, c=c: model.L_zeta(x, t, z) - c, Z) for c in corners)

    Q = _box_samples(lo - u_star, hi + u_star, n_momentum)
    Hp_star = inf_norm_max(model.H_p, Q)
    Hxx_star = _max_over(model.H_xx, X, T, Q, _abs_max)
    Hxp_star = _max_over(model.H_xp, X, T, Q, _abs_max)
    Hpp_star = _max_over(model.H_pp, X, T, Q, _min_eig)
    if not Hpp_star > 0:
        raise ModelNotTonelli(f"sampled H_pp is not positive definite (min eigenvalue {Hpp_star})")
    root = math.sqrt((1 + d) * Hxp_star**2 + Hpp_star * Hxx_star)
    M_plus = (Hxp_star + root) / Hpp_star
    M_minus = (Hxp_star - root) / Hpp_star

    if beta1 is None:
        beta1 = cap
    Zb = _box_samples(np.full(d, -beta1), np.full(d, beta1), n_momentum)
    Lx = _max_over(lambda x, t, z: np.max(np.abs(model.L_x(x, t, z)), axis=1), X, T, Zb, np.max)
    Lzc = max(inf_norm_max(lambda x, t, z, c=c: model.L_zeta(x, t, z) - c, Zb) for c in corners)

    return SchemeBounds(
        d=d,
        r=float(r),
        P=(lo, hi),
        lambda1=float(lambda1),
        u_star=u_star,
        Hp_star=Hp_star,
        Hxx_star=Hxx_star,
        Hxp_star=Hxp_star,
        Hpp_star=Hpp_star,
        M_plus=M_plus,
        M_minus=M_minus,
        eta_star=M_plus - M_minus,
        beta1=float(beta1),
        beta_tilde=Lx + Lzc,
        meta={"n_samples": n_samples, "n_momentum": n_momentum, "model": model.name},
    )


@dataclass
class StepSizeReport:
    checks: list[tuple[str, float, float, bool]]  # (name, actual, limit, ok)

    @property
    def cfl_ok(self) -> bool:
        return self.checks[0][3]

    @property
    def semiconcavity_ok(self) -> bool:
        return all(ok for *_, ok in self.checks[1:])

    @property
    def passed(self) -> bool:
        return all(ok for *_, ok in self.checks)

    def violations(self) -> list[str]:
        return [name for name, _, _, ok in self.checks if not ok]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"condition": n, "value": v, "limit": lim if math.isfinite(lim) else None, "ok": ok}
                for n, v, lim, ok in self.checks
            ],
        }


def validate_step_sizes(bounds: SchemeBounds, grid: GridSpec) -> StepSizeReport:
    lam, tau = grid.lam, grid.tau
    checks = [("lam < lambda1", lam, bounds.lambda1, lam < bounds.lambda1)]
    for name, lim in bounds.lambda_conditions(tau):
        checks.append((name, lam, lim, lam <= lim))
    for name, lim in bounds.tau_conditions(lam):
        checks.append((name, tau, lim, tau < lim))
    return StepSizeReport(checks)
