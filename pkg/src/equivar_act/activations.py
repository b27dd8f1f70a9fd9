"""Norm-gated activations sigma(u) = f(x(u)) * u and their Jacobians.

Every activation here rescales ``u`` by a real factor that depends on ``u``
only through ``||u||``. Because a unitary matrix preserves the norm, the
factor is unchanged by ``u -> U u`` and the activation commutes with ``U``.

The three fixed families are

* ``softsign_residue``:  u / (1 + ||u||) + a u
* ``identity``:          u
* ``leaky_relu_norm``:   u if ||u|| >= c else k u

and the ``generalized`` family is f(||u|| - kappa) * u for a scalar f taken
from a closed registry (see :class:`ScalarFunction`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from equivar_act.linalg import DomainError, _norm_unchecked, apply_unitary, as_vector, to_real

EPS_ND = 1e-8  # half-width of the band around a kink treated as nonsmooth
EPS_Z = 1e-12  # below this norm the radial Jacobian term is dropped


# --------------------------------------------------------------------------
# scalar functions f: R -> R


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _sigmoid_d(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


def _tanh_d(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _leaky(x, k):
    return np.where(x >= 0, x, k * x)


def _leaky_d(x, k):
    return np.where(x >= 0, 1.0, k)


def _softsign_profile(x, a):
    # 1/(1+|x|) + a equals 1/(1+x) + a on x >= 0 and stays finite for x < 0.
    return 1.0 / (1.0 + np.abs(x)) + a


def _softsign_profile_d(x, a):
    return np.where(x >= 0, -1.0, 1.0) * (1.0 / (1.0 + np.abs(x))) ** 2


def _one(x, _=None):
    return np.ones_like(np.asarray(x, dtype=np.float64))


def _zero(x, _=None):
    return np.zeros_like(np.asarray(x, dtype=np.float64))


def _step_leaky(x, k):
    return np.where(x >= 0, 1.0, k)


# kind -> (f, f', kink at x = 0)
_REGISTRY = {
    "sigmoid": (lambda x, p: _sigmoid(x), lambda x, p: _sigmoid_d(x), False),
    "tanh": (lambda x, p: np.tanh(x), lambda x, p: _tanh_d(x), False),
    "leaky_relu": (_leaky, _leaky_d, True),
    "softsign_residue_profile": (_softsign_profile, _softsign_profile_d, True),
    "identity": (_one, _zero, False),
    "step_leaky": (_step_leaky, _zero, True),
}

SCALAR_KINDS = tuple(_REGISTRY)

_DEFAULT_PARAM = {"leaky_relu": 0.1, "softsign_residue_profile": 0.0, "step_leaky": 0.1}


@dataclass(frozen=True)
class ScalarFunction:
    """A registered scalar gate f with its single real constant.

    ``param`` is the slope for ``leaky_relu`` and ``step_leaky`` and the
    residue ``a`` for ``softsign_residue_profile``; other kinds ignore it.
    ``identity`` is the constant-one profile, i.e. the gate that turns the
    generalized activation into the identity map.
    """

    kind: str
    param: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in _REGISTRY:
            raise DomainError(f"unknown scalar function {self.kind!r}; expected one of {SCALAR_KINDS}")
        param = _DEFAULT_PARAM.get(self.kind, 0.0) if self.param is None else float(self.param)
        if not math.isfinite(param):
            raise DomainError(f"{self.kind}: constant must be finite")
        if self.kind == "step_leaky" and not 0.0 <= param < 1.0:
            raise DomainError(f"step_leaky slope must satisfy 0 <= k < 1, got {param}")
        if self.kind == "softsign_residue_profile" and param < 0:
            raise DomainError(f"softsign residue must be >= 0, got {param}")
        object.__setattr__(self, "param", param)

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        out = _REGISTRY[self.kind][0](np.asarray(x, dtype=np.float64), self.param)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, x):
        """f'(x); at a kink the right derivative is returned (subgradient)."""
        out = _REGISTRY[self.kind][1](np.asarray(x, dtype=np.float64), self.param)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def has_kink(self) -> bool:
        """True if f is nonsmooth at x = 0 (the only kink any registered kind has)."""
        return _REGISTRY[self.kind][2]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param}


# --------------------------------------------------------------------------
# activation specs

FAMILIES = ("softsign_residue", "identity", "leaky_relu_norm", "generalized")


@dataclass(frozen=True)
class ActivationSpec:
    """Which activation family to use, together with its constants.

    Only the fields relevant to ``family`` are meaningful: ``a`` for
    softsign_residue, ``k`` and ``c`` for leaky_relu_norm, ``f`` and
    ``kappa`` for generalized.
    """

    family: str
    a: float = 0.0
    k: float = 0.0
    c: float = 0.0
    f: ScalarFunction | None = None
    kappa: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown activation family {self.family!r}; expected one of {FAMILIES}")
        for name in ("a", "k", "c", "kappa"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise DomainError(f"{self.family}: {name} must be finite, got {v}")
        if self.family == "softsign_residue":
            _check_residue(self.a)
        elif self.family == "leaky_relu_norm":
            _check_leaky(self.k, self.c)
        elif self.family == "generalized" and not isinstance(self.f, ScalarFunction):
            raise DomainError("generalized family needs a ScalarFunction f")

    @classmethod
    def softsign(cls, a: float = 0.0) -> ActivationSpec:
        return cls("softsign_residue", a=float(a))

    @classmethod
    def identity(cls) -> ActivationSpec:
        return cls("identity")

    @classmethod
    def leaky(cls, k: float, c: float) -> ActivationSpec:
        return cls("leaky_relu_norm", k=float(k), c=float(c))

    @classmethod
    def generalized(cls, f: ScalarFunction | str, kappa: float = 0.0) -> ActivationSpec:
        if isinstance(f, str):
            f = ScalarFunction(f)
        return cls("generalized", f=f, kappa=float(kappa))

    @property
    def label(self) -> str:
        if self.family == "softsign_residue":
            return f"softsign_residue(a={self.a:g})"
        if self.family == "leaky_relu_norm":
            return f"leaky_relu_norm(k={self.k:g},c={self.c:g})"
        if self.family == "generalized":
            p = "" if self.f.kind in ("sigmoid", "tanh", "identity") else f"[{self.f.param:g}]"
            return f"generalized({self.f.kind}{p},kappa={self.kappa:g})"
        return "identity"

    def to_dict(self) -> dict:
        if self.family == "softsign_residue":
            return {"family": self.family, "a": self.a}
        if self.family == "leaky_relu_norm":
            return {"family": self.family, "k": self.k, "c": self.c}
        if self.family == "generalized":
            return {"family": self.family, "f": self.f.to_dict(), "kappa": self.kappa}
        return {"family": self.family}

    @classmethod
    def from_dict(cls, d: dict) -> ActivationSpec:
        if not isinstance(d, dict) or "family" not in d:
            raise DomainError("activation must be an object with a 'family' field")
        allowed = {
            "softsign_residue": {"family", "a"},
            "identity": {"family"},
            "leaky_relu_norm": {"family", "k", "c"},
            "generalized": {"family", "f", "kappa"},
        }.get(d["family"])
        if allowed is None:
            raise DomainError(f"unknown activation family {d['family']!r}")
        extra = set(d) - allowed
        if extra:
            raise DomainError(f"unknown activation field(s) {sorted(extra)} for family {d['family']}")
        kw = {k: v for k, v in d.items() if k != "family"}
        if "f" in kw:
            f = kw["f"]
            if not isinstance(f, dict) or set(f) - {"kind", "param"} or "kind" not in f:
                raise DomainError("activation.f must be an object {kind, param}")
            kw["f"] = ScalarFunction(f["kind"], f.get("param"))
        for name in ("a", "k", "c", "kappa"):
            if name in kw:
                kw[name] = _as_real(kw[name], name)
        return cls(d["family"], **kw)


def _as_real(v, name: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise DomainError(f"{name} must be a number, got {v!r}")
    return float(v)


def _check_residue(a: float) -> None:
    if not a >= 0:
        raise DomainError(f"residue a must be >= 0, got {a}")


def _check_leaky(k: float, c: float) -> None:
    if not 0.0 <= k < 1.0:
        raise DomainError(f"slope k must satisfy 0 <= k < 1, got {k}")
    if not c >= 0:
        raise DomainError(f"threshold c must be >= 0, got {c}")


# --------------------------------------------------------------------------
# the concrete operations


def softsign_residue(u, a: float) -> np.ndarray:
    """u / (1 + ||u||) + a u."""
    _check_residue(a)
    u = as_vector(u)
    r = _norm_unchecked(u)[..., None]
    return u / (1.0 + r) + a * u


def identity_activation(u) -> np.ndarray:
    return as_vector(u)


def leaky_relu_norm(u, k: float, c: float) -> np.ndarray:
    """u where ||u|| >= c, k u otherwise. The boundary ||u|| == c keeps u."""
    _check_leaky(k, c)
    u = as_vector(u)
    r = _norm_unchecked(u)[..., None]
    return np.where(r >= c, u, k * u)


def gate_input(u, kappa: float):
    """The unitary-invariant gate value x = ||u|| - kappa (may be negative)."""
    u = as_vector(u)
    x = _norm_unchecked(u) - kappa
    return float(x) if np.ndim(x) == 0 else x


def generalized_activation(u, f: ScalarFunction, kappa: float) -> np.ndarray:
    """f(||u|| - kappa) * u."""
    u = as_vector(u)
    x = _norm_unchecked(u) - np.asarray(kappa, dtype=np.float64)
    return np.asarray(f.value(x))[..., None] * u


def activate(spec: ActivationSpec, u, kappa=None) -> np.ndarray:
    """Apply ``spec`` to ``u``.

    ``kappa`` overrides ``spec.kappa`` for the generalized family and may be
    an array broadcasting against the batch axes of ``u`` (one offset per
    node). The fixed families have no offset and ignore it.
    """
    if spec.family == "softsign_residue":
        return softsign_residue(u, spec.a)
    if spec.family == "leaky_relu_norm":
        return leaky_relu_norm(u, spec.k, spec.c)
    if spec.family == "generalized":
        return generalized_activation(u, spec.f, spec.kappa if kappa is None else kappa)
    return identity_activation(u)


# --------------------------------------------------------------------------
# radial profile, kinks and Jacobians


def radial_profile(spec: ActivationSpec, r, kappa=None):
    """Scale factor s(r) with sigma(u) = s(||u||) u, plus ds/dr and ds/dkappa.

    At a kink the branch that the forward pass takes is differentiated.
    """
    r = np.asarray(r, dtype=np.float64)
    if spec.family == "softsign_residue":
        s = 1.0 / (1.0 + r) + spec.a
        return s, -1.0 / (1.0 + r) ** 2, np.zeros_like(r)
    if spec.family == "leaky_relu_norm":
        s = np.where(r >= spec.c, 1.0, spec.k)
        return s, np.zeros_like(r), np.zeros_like(r)
    if spec.family == "generalized":
        kappa = spec.kappa if kappa is None else kappa
        x = r - np.asarray(kappa, dtype=np.float64)
        df = np.asarray(spec.f.derivative(x))
        return np.asarray(spec.f.value(x)), df, -df
    return np.ones_like(r), np.zeros_like(r), np.zeros_like(r)


def kink_radii(spec: ActivationSpec, kappa=None) -> list:
    """Norms at which the scale factor is not differentiable (the origin aside)."""
    if spec.family == "leaky_relu_norm":
        return [spec.c]
    if spec.family == "generalized" and spec.f.has_kink:
        return [spec.kappa if kappa is None else kappa]
    return []


def near_nonsmooth(spec: ActivationSpec, r, kappa=None, eps: float = EPS_ND):
    """Flag norms within ``eps`` (relative to max(1, kink)) of a nonsmooth point.

    The origin counts as nonsmooth whenever the radial slope there is nonzero.
    """
    r = np.asarray(r, dtype=np.float64)
    flag = np.zeros(r.shape, dtype=bool)
    for kink in kink_radii(spec, kappa):
        kink = np.asarray(kink, dtype=np.float64)
        flag |= np.abs(r - kink) <= eps * np.maximum(1.0, np.abs(kink))
    _, slope0, _ = radial_profile(spec, np.zeros_like(r), kappa)
    flag |= (r <= eps) & (slope0 != 0)
    return flag


class JacobianResult(NamedTuple):
    matrix: np.ndarray
    flagged: bool  # True when evaluated on (or within EPS_ND of) a nonsmooth point


def activation_jacobian(spec: ActivationSpec, u, kappa=None) -> JacobianResult:
    """Real 2n x 2n Jacobian of the activation in the interleaved embedding.

    J = s I + (s'/r) v v^T with v the embedding of u and r = ||u||. Below
    EPS_Z the radial term is dropped and J = s(0) I.
    """
    u = as_vector(u)
    if u.ndim != 1:
        raise DomainError("activation_jacobian takes a single vector")
    r = float(_norm_unchecked(u))
    s, ds, _ = radial_profile(spec, r, kappa)
    dim = 2 * u.shape[0]
    J = float(s) * np.eye(dim)
    if r >= EPS_Z:
        v = to_real(u)
        J += (float(ds) / r) * np.outer(v, v)
    return JacobianResult(J, bool(near_nonsmooth(spec, r, kappa)))


def activation_vjp(spec: ActivationSpec, u: np.ndarray, grad_out: np.ndarray, kappa=None):
    """Vector-Jacobian product for batched inputs.

    ``grad_out`` holds dL/dRe + i dL/dIm of the output. Returns the same
    quantity for the input and dL/dkappa per vector (summing is left to the
    caller). Matches :func:`activation_jacobian` applied in the embedding.
    """
    r = _norm_unchecked(u)
    s, ds, dk = radial_profile(spec, r, kappa)
    proj = np.sum(u.real * grad_out.real + u.imag * grad_out.imag, axis=-1)
    radial = np.where(r >= EPS_Z, ds / np.where(r >= EPS_Z, r, 1.0), 0.0)
    grad_in = s[..., None] * grad_out + (radial * proj)[..., None] * u
    return grad_in, dk * proj


def check_equivariance(spec: ActivationSpec, u, U, kappa=None):
    """max_i |sigma(U u) - U sigma(u)|_i, computed by evaluating both sides."""
    u = as_vector(u)
    lhs = activate(spec, apply_unitary(U, u), kappa)
    rhs = apply_unitary(U, activate(spec, u, kappa))
    err = np.max(np.abs(lhs - rhs), axis=-1)
    return float(err) if np.ndim(err) == 0 else err
