"""A minimal feedforward network that is equivariant under a shared unitary.

Each sample is a bundle of ``m`` complex vectors of common dimension ``n``,
stored as an array of shape ``(m, n)`` (or ``(S, m, n)`` for ``S`` samples).
A layer mixes channels with scalar weights and applies a norm-gated
activation per output node::

    u_i = sum_j W[i, j] x_j          (no additive bias)
    y_i = sigma(u_i; kappa_i)

Scalar mixing commutes with any ``U`` acting on the vector index, and so does
the activation, so ``layer(U x) = U layer(x)``. A constant bias vector would
not, which is why the per-node offset ``kappa`` is the only shift available.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from equivar_act.activations import ActivationSpec, activate
from equivar_act.linalg import DomainError, apply_unitary, random_stream

SCHEMA = "equivar-act/1"


class ModelFileError(ValueError):
    """A model file could not be parsed or violates the model invariants."""


@dataclass
class LayerParams:
    weights: np.ndarray  # (m_out, m_in), float64 or complex128
    kappas: np.ndarray  # (m_out,)
    activation: ActivationSpec

    def __post_init__(self):
        w = np.asarray(self.weights)
        self.weights = w.astype(np.complex128 if np.iscomplexobj(w) else np.float64)
        self.kappas = np.asarray(self.kappas, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise DomainError(f"weights must be a non-empty 2-d matrix, got shape {self.weights.shape}")
        if self.kappas.shape != (self.weights.shape[0],):
            raise DomainError(f"expected {self.weights.shape[0]} kappas, got {self.kappas.shape[0]}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.kappas))):
            raise DomainError("weights and kappas must be finite")

    @property
    def m_in(self) -> int:
        return self.weights.shape[1]

    @property
    def m_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> LayerParams:
        return LayerParams(self.weights.copy(), self.kappas.copy(), self.activation)


@dataclass
class ModelParams:
    layers: list[LayerParams]
    vector_dim: int
    complex_weights: bool = field(default=False)

    def __post_init__(self):
        if not self.layers:
            raise DomainError("a model needs at least one layer")
        if int(self.vector_dim) != self.vector_dim or self.vector_dim < 1:
            raise DomainError(f"vector_dim must be a positive integer, got {self.vector_dim}")
        self.vector_dim = int(self.vector_dim)
        for i in range(1, len(self.layers)):
            if self.layers[i].m_in != self.layers[i - 1].m_out:
                raise DomainError(
                    f"layer {i} expects {self.layers[i].m_in} input channels "
                    f"but layer {i - 1} produces {self.layers[i - 1].m_out}"
                )
        if not self.complex_weights and any(np.iscomplexobj(p.weights) for p in self.layers):
            raise DomainError("complex weights require complex_weights=True")

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].m_in] + [p.m_out for p in self.layers]

    def copy(self) -> ModelParams:
        return ModelParams([p.copy() for p in self.layers], self.vector_dim, self.complex_weights)


def init_model(
    widths,
    vector_dim: int,
    activation: ActivationSpec | list,
    seed: int,
    complex_weights: bool = False,
) -> ModelParams:
    """Seeded model with weights ~ N(0, 1/m_in) and every kappa at 0.

    ``activation`` is either one spec shared by all layers or one per layer.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise DomainError("widths must list at least an input and an output width")
    acts = activation if isinstance(activation, (list, tuple)) else [activation] * (len(widths) - 1)
    if len(acts) != len(widths) - 1:
        raise DomainError("need one activation per layer")
    layers = []
    for i, (m_in, m_out) in enumerate(zip(widths[:-1], widths[1:])):
        rng = random_stream(seed, "init", i)
        std = 1.0 / math.sqrt(m_in)
        if complex_weights:
            w = rng.standard_normal((m_out, m_in, 2)) * (std / math.sqrt(2.0))
            w = w[..., 0] + 1j * w[..., 1]
        else:
            w = rng.standard_normal((m_out, m_in)) * std
        layers.append(LayerParams(w, np.zeros(m_out), acts[i]))
    return ModelParams(layers, vector_dim, complex_weights)


def _as_bundle(x, m: int, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim < 2 or x.shape[-2:] != (m, n):
        raise DomainError(f"expected a bundle of {m} channels of dimension {n}, got shape {x.shape}")
    return x


def mix(p: LayerParams, x: np.ndarray) -> np.ndarray:
    """Pre-activations u_i = sum_j W[i, j] x_j."""
    return p.weights @ x


def layer_forward(p: LayerParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim < 2 or x.shape[-2] != p.m_in:
        raise DomainError(f"layer expects {p.m_in} input channels, got shape {x.shape}")
    return activate(p.activation, mix(p, x), p.kappas)


def model_forward(m: ModelParams, x) -> np.ndarray:
    x = _as_bundle(x, m.layers[0].m_in, m.vector_dim)
    for p in m.layers:
        x = layer_forward(p, x)
    return x


def biased_model_forward(m: ModelParams, x, biases) -> np.ndarray:
    """Negative control: the same network with a constant vector added to each pre-activation.

    ``biases[l]`` has shape ``(m_out, n)``. This breaks equivariance and
    exists only so the equivariance harness can be shown to detect it.
    """
    x = _as_bundle(x, m.layers[0].m_in, m.vector_dim)
    for p, b in zip(m.layers, biases):
        x = activate(p.activation, mix(p, x) + b, p.kappas)
    return x


def equivariance_error(forward, x, U) -> float:
    """max |forward(U x) - U forward(x)| with U applied to every channel."""
    lhs = forward(apply_unitary(U, x))
    rhs = apply_unitary(U, forward(x))
    return float(np.max(np.abs(lhs - rhs)))


# --------------------------------------------------------------------------
# serialization


def model_to_dict(m: ModelParams) -> dict:
    layers = []
    for p in m.layers:
        d = {"weights": p.weights.real.tolist()}
        if m.complex_weights:
            d["weights_imag"] = p.weights.imag.tolist()
        d["kappas"] = p.kappas.tolist()
        d["activation"] = p.activation.to_dict()
        layers.append(d)
    return {"schema": SCHEMA, "vector_dim": m.vector_dim, "complex_weights": m.complex_weights, "layers": layers}


def save_model(m: ModelParams, path) -> None:
    """Write ``m`` as JSON. Floats use the shortest repr that round-trips exactly."""
    text = json.dumps(model_to_dict(m), indent=1, allow_nan=False)
    Path(path).write_text(text + "\n")


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def _matrix(value, where: str) -> np.ndarray:
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ModelFileError(f"{where}: expected a non-empty list of rows")
    widths = {len(r) for r in value}
    if len(widths) != 1 or 0 in widths:
        raise ModelFileError(f"{where}: rows must be non-empty and of equal length")
    for i, row in enumerate(value):
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ModelFileError(f"{where}[{i}][{j}]: expected a number, got {v!r}")
    return np.array(value, dtype=np.float64)


def model_from_dict(d: dict) -> ModelParams:
    if not isinstance(d, dict):
        raise ModelFileError("top level must be an object")
    extra = set(d) - {"schema", "vector_dim", "complex_weights", "layers"}
    if extra:
        raise ModelFileError(f"unknown top-level field(s): {sorted(extra)}")
    for key in ("schema", "vector_dim", "layers"):
        if key not in d:
            raise ModelFileError(f"missing field '{key}'")
    if d["schema"] != SCHEMA:
        raise ModelFileError(f"schema: expected {SCHEMA!r}, got {d['schema']!r}")
    n = d["vector_dim"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ModelFileError(f"vector_dim: expected a positive integer, got {n!r}")
    cplx = d.get("complex_weights", False)
    if not isinstance(cplx, bool):
        raise ModelFileError("complex_weights: expected true or false")
    if not isinstance(d["layers"], list) or not d["layers"]:
        raise ModelFileError("layers: expected a non-empty list")

    layers = []
    for i, ld in enumerate(d["layers"]):
        where = f"layers[{i}]"
        if not isinstance(ld, dict):
            raise ModelFileError(f"{where}: expected an object")
        allowed = {"weights", "kappas", "activation"} | ({"weights_imag"} if cplx else set())
        extra = set(ld) - allowed
        if extra:
            raise ModelFileError(f"{where}: unknown field(s) {sorted(extra)}")
        for key in sorted(allowed):
            if key not in ld:
                raise ModelFileError(f"{where}: missing field '{key}'")
        w = _matrix(ld["weights"], f"{where}.weights")
        if cplx:
            wi = _matrix(ld["weights_imag"], f"{where}.weights_imag")
            if wi.shape != w.shape:
                raise ModelFileError(f"{where}.weights_imag: shape {wi.shape} differs from weights {w.shape}")
            w = w + 1j * wi
        kappas = ld["kappas"]
        if not isinstance(kappas, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in kappas):
            raise ModelFileError(f"{where}.kappas: expected a list of numbers")
        if len(kappas) != w.shape[0]:
            raise ModelFileError(f"{where}.kappas: expected {w.shape[0]} values (one per node), got {len(kappas)}")
        if layers and w.shape[1] != layers[-1].m_out:
            raise ModelFileError(
                f"{where}.weights: width mismatch, {w.shape[1]} input channels but "
                f"layers[{i - 1}] has {layers[-1].m_out} outputs"
            )
        try:
            act = ActivationSpec.from_dict(ld["activation"])
            layers.append(LayerParams(w, np.array(kappas, dtype=np.float64), act))
        except DomainError as e:
            raise ModelFileError(f"{where}: {e}") from None
    return ModelParams(layers, n, cplx)


def load_model(path) -> ModelParams:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ModelFileError(f"{path}: {e.strerror or e}") from None
    try:
        d = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ModelFileError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    except ValueError as e:
        raise ModelFileError(f"{path}: {e}") from None
    try:
        return model_from_dict(d)
    except ModelFileError as e:
        raise ModelFileError(f"{path}: {e}") from None
