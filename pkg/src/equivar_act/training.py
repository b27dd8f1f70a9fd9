"""Reverse-mode gradients, SGD with momentum and finite-difference checks.

Complex quantities are differentiated through their real and imaginary
parts: the gradient of a real loss L with respect to a complex array z is
stored as ``dL/dRe(z) + 1j * dL/dIm(z)``. With that convention the linear
stage u = W x back-propagates as ``W^H g`` and gives ``sum_n g conj(x)`` for
the weights (real part only when W is real).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from equivar_act.activations import EPS_ND, ActivationSpec, ScalarFunction, activate, activation_vjp, near_nonsmooth
from equivar_act.linalg import DomainError, _norm_unchecked, random_stream, random_vector
from equivar_act.net import ModelParams, init_model, mix, model_forward

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6


class NumericError(ArithmeticError):
    """A non-finite value appeared in the forward or backward pass."""


class DivergenceError(RuntimeError):
    """Training loss exceeded the divergence threshold."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    steps: int = 2000
    seed: int = 0
    batch_size: int | None = None  # None: full batch
    fd_step: float = 1e-6

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise DomainError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"momentum must be in [0, 1), got {self.momentum}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise DomainError(f"steps must be a non-negative integer, got {self.steps}")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.fd_step > 0:
            raise DomainError(f"fd_step must be > 0, got {self.fd_step}")


@dataclass
class Gradient:
    weights: list[np.ndarray]
    kappas: list[np.ndarray]

    @classmethod
    def zeros_like(cls, m: ModelParams) -> Gradient:
        return cls([np.zeros_like(p.weights) for p in m.layers], [np.zeros_like(p.kappas) for p in m.layers])

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.weights + self.kappas)


# --------------------------------------------------------------------------
# loss and gradients


def loss(pred, target) -> float:
    """Squared residual norm summed over channels.

    With a leading sample axis ``(S, m, n)`` the per-sample losses are averaged.
    """
    pred = np.asarray(pred, dtype=np.complex128)
    target = np.asarray(target, dtype=np.complex128)
    if pred.shape != target.shape:
        raise DomainError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    d = pred - target
    total = float(np.sum(d.real**2 + d.imag**2))
    return total / pred.shape[0] if pred.ndim == 3 else total


def _forward_cached(m: ModelParams, x: np.ndarray):
    inputs, pre = [], []
    for li, p in enumerate(m.layers):
        with np.errstate(over="ignore", invalid="ignore"):
            u = mix(p, x)
        bad = ~np.all(np.isfinite(u), axis=-1)
        if np.any(bad):
            node = int(np.argwhere(bad)[0][-1])
            raise NumericError(f"non-finite pre-activation at layer {li}, node {node}")
        inputs.append(x)
        pre.append(u)
        x = activate(p.activation, u, p.kappas)
    return x, inputs, pre


def _batched(x, m: ModelParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (m.layers[0].m_in, m.vector_dim):
        raise DomainError(
            f"expected samples of shape ({m.layers[0].m_in}, {m.vector_dim}), got array of shape {x.shape}"
        )
    return x


def loss_and_grad(m: ModelParams, x, target) -> tuple[float, Gradient]:
    """Mean loss over samples and its gradient with respect to all weights and kappas."""
    x = _batched(x, m)
    target = np.asarray(target, dtype=np.complex128).reshape((x.shape[0],) + (m.layers[-1].m_out, m.vector_dim))
    y, inputs, pre = _forward_cached(m, x)
    value = loss(y, target)

    g = 2.0 * (y - target) / x.shape[0]
    gw, gk = [], []
    for li in range(len(m.layers) - 1, -1, -1):
        p = m.layers[li]
        g_u, g_kappa = activation_vjp(p.activation, pre[li], g, p.kappas)
        w_grad = np.einsum("sin,sjn->ij", g_u, inputs[li].conj())
        gw.append(w_grad if np.iscomplexobj(p.weights) else w_grad.real.copy())
        gk.append(np.sum(g_kappa, axis=0))
        g = np.einsum("ij,sin->sjn", p.weights.conj(), g_u)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at layer {li}")
    return value, Gradient(gw[::-1], gk[::-1])


def backward(m: ModelParams, x, target) -> Gradient:
    return loss_and_grad(m, x, target)[1]


def dataset_loss(m: ModelParams, x, target) -> float:
    x = _batched(x, m)
    return loss(model_forward(m, x), np.asarray(target).reshape(x.shape[0], -1, m.vector_dim))


# --------------------------------------------------------------------------
# optimizer


@dataclass
class MomentumState:
    weights: list[np.ndarray] | None = None
    kappas: list[np.ndarray] | None = None


def sgd_step(m: ModelParams, g: Gradient, cfg: TrainConfig, state: MomentumState | None = None) -> ModelParams:
    """One SGD update of every weight and every kappa.

    velocity <- momentum * velocity + g;  theta <- theta - lr * velocity.
    ``state`` holds the velocities and is updated in place.
    """
    if len(g.weights) != len(m.layers):
        raise DomainError("gradient does not match the model's layers")
    if state is None:
        state = MomentumState()
    if state.weights is None:
        state.weights = [np.zeros_like(w) for w in g.weights]
        state.kappas = [np.zeros_like(k) for k in g.kappas]
    out = m.copy()
    for i, p in enumerate(out.layers):
        state.weights[i] = cfg.momentum * state.weights[i] + g.weights[i]
        state.kappas[i] = cfg.momentum * state.kappas[i] + g.kappas[i]
        p.weights = p.weights - cfg.learning_rate * state.weights[i]
        p.kappas = p.kappas - cfg.learning_rate * state.kappas[i]
    return out


# --------------------------------------------------------------------------
# synthetic tasks


@dataclass(frozen=True)
class Task:
    """A seeded synthetic regression problem.

    ``identity-fit`` regresses the input onto itself. ``teacher-student``
    draws targets from a random teacher network (random kappas included)
    with the same shape as the student.
    """

    name: str
    widths: tuple = (2, 2)
    vector_dim: int = 4
    activation: ActivationSpec = field(default_factory=lambda: ActivationSpec.generalized(ScalarFunction("sigmoid")))
    n_samples: int = 32
    steps: int = 2000  # default training length used by the CLI


TASKS = {
    "identity-fit": Task("identity-fit", widths=(2, 2), vector_dim=4, n_samples=32, steps=2000),
    "teacher-student": Task("teacher-student", widths=(2, 3, 2), vector_dim=4, n_samples=32, steps=8000),
}


def get_task(name: str) -> Task:
    try:
        return TASKS[name]
    except KeyError:
        raise DomainError(f"unknown task {name!r}; expected one of {sorted(TASKS)}") from None


def teacher_model(task: Task, seed: int) -> ModelParams:
    teacher = init_model(task.widths, task.vector_dim, task.activation, seed=random_stream(seed, "teacher").integers(2**63))
    rng = random_stream(seed, "teacher-kappa")
    for p in teacher.layers:
        p.kappas = rng.normal(0.0, 0.5, size=p.m_out)
    return teacher


def make_dataset(task: Task, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = random_stream(seed, "data", task.name)
    # entries of variance 1/n give channels of norm ~1
    x = random_vector(rng, (task.n_samples, task.widths[0], task.vector_dim), scale=1.0 / math.sqrt(task.vector_dim))
    if task.name == "identity-fit":
        return x, x.copy()
    if task.name == "teacher-student":
        return x, model_forward(teacher_model(task, seed), x)
    raise DomainError(f"unknown task {task.name!r}")


def student_model(task: Task, seed: int) -> ModelParams:
    return init_model(task.widths, task.vector_dim, task.activation, seed=random_stream(seed, "student").integers(2**63))


def train(cfg: TrainConfig, task: Task | str, data=None, model: ModelParams | None = None):
    """Run SGD on ``task``; returns the trained model and the loss history.

    ``history[t]`` is the full-batch loss after ``t`` updates, so it has
    ``cfg.steps + 1`` entries. ``data`` overrides the task's seeded dataset.
    """
    task = get_task(task) if isinstance(task, str) else task
    x, target = make_dataset(task, cfg.seed) if data is None else data
    m = student_model(task, cfg.seed) if model is None else model.copy()
    state = MomentumState()
    shuffle = random_stream(cfg.seed, "batches")
    history = []
    for step in range(cfg.steps + 1):
        if cfg.batch_size is None:
            value, g = loss_and_grad(m, x, target)
        else:
            value = dataset_loss(m, x, target)
        history.append(value)
        if not value <= DIVERGENCE_LOSS:
            raise DivergenceError(f"loss {value:.3e} exceeded {DIVERGENCE_LOSS:.0e} at step {step}")
        if step == cfg.steps:
            break
        if cfg.batch_size is not None:
            idx = shuffle.permutation(x.shape[0])[: cfg.batch_size]
            _, g = loss_and_grad(m, x[idx], target[idx])
        m = sgd_step(m, g, cfg, state)
        if step % 500 == 0:
            log.debug("step %d loss %.6e", step, value)
    return m, np.array(history)


# --------------------------------------------------------------------------
# finite-difference gradient check

REL_TOL = 1e-5
ABS_TOL = 1e-10


@dataclass
class ParamCheck:
    layer: int
    name: str  # "weight", "weight_imag" or "kappa"
    index: tuple
    analytic: float
    numeric: float
    error: float
    flagged: bool

    @property
    def ok(self) -> bool:
        if max(abs(self.analytic), abs(self.numeric)) < ABS_TOL:
            return self.error <= ABS_TOL
        return self.error <= REL_TOL


@dataclass
class GradCheckReport:
    entries: list[ParamCheck]

    @property
    def checked(self) -> list[ParamCheck]:
        return [e for e in self.entries if not e.flagged]

    @property
    def flagged(self) -> list[ParamCheck]:
        return [e for e in self.entries if e.flagged]

    @property
    def max_error(self) -> float:
        return max((e.error for e in self.checked), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.checked)

    def worst(self, k: int = 5) -> list[ParamCheck]:
        return sorted(self.checked, key=lambda e: e.error, reverse=True)[:k]


def _compare(a: float, n: float) -> float:
    scale = max(abs(a), abs(n))
    return abs(a - n) if scale < ABS_TOL else abs(a - n) / scale


def flagged_nodes(m: ModelParams, x, fd_step: float = 1e-6) -> list[np.ndarray]:
    """Per layer, a boolean mask of nodes whose pre-activation norm sits near a kink.

    The band is the wider of EPS_ND and 100 * fd_step, so a central
    difference cannot straddle the kink unnoticed.
    """
    x = _batched(x, m)
    _, _, pre = _forward_cached(m, x)
    eps = max(EPS_ND, 100.0 * fd_step)
    out = []
    for p, u in zip(m.layers, pre):
        r = _norm_unchecked(u)
        out.append(np.any(near_nonsmooth(p.activation, r, p.kappas, eps=eps), axis=0))
    return out


def grad_check(m: ModelParams, x, target, fd_step: float = 1e-6) -> GradCheckReport:
    """Compare every analytic gradient component with a central difference of the loss.

    Parameters feeding a node that lies near a nonsmooth point (its own
    weight row and kappa, and everything in earlier layers) are flagged and
    excluded from pass/fail.
    """
    x = _batched(x, m)
    target = np.asarray(target, dtype=np.complex128).reshape((x.shape[0], m.layers[-1].m_out, m.vector_dim))
    _, g = loss_and_grad(m, x, target)
    nodes = flagged_nodes(m, x, fd_step)
    upstream = [any(np.any(f) for f in nodes[li + 1 :]) for li in range(len(m.layers))]

    def fd(li, attr, idx, delta):
        h = fd_step * max(1.0, abs(getattr(m.layers[li], attr)[idx]))
        vals = []
        for sign in (1.0, -1.0):
            mm = m.copy()
            arr = getattr(mm.layers[li], attr)
            arr[idx] = arr[idx] + sign * h * delta
            vals.append(dataset_loss(mm, x, target))
        return (vals[0] - vals[1]) / (2.0 * h)

    entries = []
    for li, p in enumerate(m.layers):
        cplx = np.iscomplexobj(p.weights)
        for idx in np.ndindex(p.weights.shape):
            flag = bool(nodes[li][idx[0]] or upstream[li])
            a = float(g.weights[li][idx].real)
            n = fd(li, "weights", idx, 1.0)
            entries.append(ParamCheck(li, "weight", idx, a, n, _compare(a, n), flag))
            if cplx:
                a = float(g.weights[li][idx].imag)
                n = fd(li, "weights", idx, 1j)
                entries.append(ParamCheck(li, "weight_imag", idx, a, n, _compare(a, n), flag))
        for i in range(p.m_out):
            flag = bool(nodes[li][i] or upstream[li])
            a = float(g.kappas[li][i])
            n = fd(li, "kappas", i, 1.0)
            entries.append(ParamCheck(li, "kappa", (i,), a, n, _compare(a, n), flag))
    return GradCheckReport(entries)
