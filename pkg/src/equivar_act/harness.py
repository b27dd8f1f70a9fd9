"""Seeded audits producing JSON-ready reports.

All randomness comes from one root seed. Each case draws from its own named
substream (see :func:`equivar_act.linalg.derive_seed`), e.g. the unitary for
trial ``t`` at dimension ``n`` uses ``derive_seed(seed, "audit-U", n, t)``,
so any single case can be regenerated without running the others.
"""

from __future__ import annotations

import time
from itertools import product

import numpy as np

from equivar_act.activations import EPS_ND, ActivationSpec, ScalarFunction, activate, check_equivariance, gate_input
from equivar_act.linalg import apply_unitary, derive_seed, haar_unitary, random_stream, random_vector
from equivar_act.net import init_model
from equivar_act.training import grad_check

DEFAULT_DIMS = (1, 2, 8, 64)
EQUIVARIANCE_TOL = 1e-10
GATE_TOL = 1e-12
RECOVERY_TOL = 1e-14

KAPPAS = (-1.0, 0.0, 1.0)
PROFILES = ("sigmoid", "tanh", "leaky_relu", "softsign_residue_profile", "identity")


def audit_specs(families=None) -> list[ActivationSpec]:
    """The representative constants for every family, filtered by family name."""
    specs = [ActivationSpec.softsign(a) for a in (0.0, 0.01, 0.1)]
    specs.append(ActivationSpec.identity())
    specs += [ActivationSpec.leaky(k, c) for k, c in product((0.0, 0.1, 0.5), (0.5, 1.0))]
    specs += [ActivationSpec.generalized(ScalarFunction(f), kappa) for f, kappa in product(PROFILES, KAPPAS)]
    specs += [ActivationSpec.generalized(ScalarFunction("step_leaky", 0.1), kappa) for kappa in KAPPAS]
    if families:
        specs = [s for s in specs if s.family in families]
    return specs


def sample_inputs(seed: int, n: int, trials: int, tag: str = "audit") -> np.ndarray:
    """Random vectors with log-normally spread norms centred near 1."""
    rng = random_stream(seed, tag + "-u", n)
    u = random_vector(rng, (trials, n), scale=1.0 / np.sqrt(n))
    return u * np.exp(rng.standard_normal(trials))[:, None]


def sample_unitaries(seed: int, n: int, trials: int) -> np.ndarray:
    return np.stack([haar_unitary(n, derive_seed(seed, "audit-U", n, t)) for t in range(trials)])


def equivariance_audit(
    seed: int = 0,
    dims=DEFAULT_DIMS,
    trials: int = 1000,
    tolerance: float = EQUIVARIANCE_TOL,
    families=None,
) -> dict:
    """Check sigma(U u) = U sigma(u), gate invariance and the recovery identities.

    A pair passes when its error is at most ``tolerance * max(1, ||u||)``.
    """
    t0 = time.perf_counter()
    specs = audit_specs(families)
    equiv, gate = [], []
    for n in dims:
        u = sample_inputs(seed, n, trials)
        U = sample_unitaries(seed, n, trials)
        scale = np.maximum(1.0, np.linalg.norm(u, axis=-1))
        for spec in specs:
            err = check_equivariance(spec, u, U)
            ratio = err / scale
            worst = int(np.argmax(ratio))
            equiv.append({
                "family": spec.label,
                "n": n,
                "seed": seed,
                "trials": trials,
                "max_error": float(err.max()),
                "max_scaled_error": float(ratio[worst]),
                "worst_trial": worst,
                "pass": bool(np.all(err <= tolerance * scale)),
            })
        Uu = apply_unitary(U, u)
        for kappa in KAPPAS:
            ratio = np.abs(gate_input(Uu, kappa) - gate_input(u, kappa)) / scale
            gate.append({
                "n": n,
                "kappa": kappa,
                "max_scaled_error": float(ratio.max()),
                "pass": bool(np.all(ratio <= GATE_TOL)),
            })
    recovery = recovery_audit(seed, dims, trials, families)
    cases = equiv + gate + recovery
    return {
        "seed": seed,
        "dims": list(dims),
        "trials": trials,
        "tolerances": {"equivariance": tolerance, "gate": GATE_TOL, "recovery": RECOVERY_TOL},
        "equivariance": equiv,
        "gate_invariance": gate,
        "recovery": recovery,
        "pass": all(c["pass"] for c in cases),
        "runtime_s": time.perf_counter() - t0,
    }


def recovery_pairs(families=None) -> list[tuple[ActivationSpec, ActivationSpec]]:
    """(fixed family, generalized form that should reproduce it)."""
    pairs = [
        (ActivationSpec.softsign(a), ActivationSpec.generalized(ScalarFunction("softsign_residue_profile", a), 0.0))
        for a in (0.0, 0.01, 0.1)
    ]
    pairs.append((ActivationSpec.identity(), ActivationSpec.generalized(ScalarFunction("identity"), 0.0)))
    pairs += [
        (ActivationSpec.leaky(k, c), ActivationSpec.generalized(ScalarFunction("step_leaky", k), c))
        for k, c in product((0.0, 0.1, 0.5), (0.5, 1.0))
    ]
    if families:
        pairs = [p for p in pairs if p[0].family in families or "generalized" in families]
    return pairs


def recovery_inputs(seed: int, n: int, trials: int, spec: ActivationSpec) -> np.ndarray:
    """Random inputs; for the thresholded family, redrawn until clear of the kink band."""
    rng = random_stream(seed, "recovery", n, spec.label)
    u = random_vector(rng, (trials, n), scale=np.exp(rng.standard_normal(trials))[:, None] / np.sqrt(n))
    if spec.family != "leaky_relu_norm":
        return u
    while True:
        bad = np.abs(np.linalg.norm(u, axis=-1) - spec.c) <= EPS_ND * max(1.0, spec.c)
        if not bad.any():
            return u
        u[bad] = random_vector(rng, (int(bad.sum()), n))


def recovery_audit(seed: int = 0, dims=DEFAULT_DIMS, trials: int = 1000, families=None) -> list[dict]:
    out = []
    for (fixed, general), n in product(recovery_pairs(families), dims):
        u = recovery_inputs(seed, n, trials, fixed)
        err = float(np.max(np.abs(activate(fixed, u) - activate(general, u))))
        out.append({
            "pair": f"{fixed.label} vs {general.label}",
            "n": n,
            "trials": trials,
            "max_error": err,
            "pass": err <= RECOVERY_TOL,
        })
    return out


# --------------------------------------------------------------------------
# gradient checks


def grad_check_specs() -> list[ActivationSpec]:
    specs = [
        ActivationSpec.softsign(0.1),
        ActivationSpec.identity(),
        ActivationSpec.leaky(0.1, 0.5),
    ]
    specs += [
        ActivationSpec.generalized(ScalarFunction(kind))
        for kind in ("sigmoid", "tanh", "leaky_relu", "softsign_residue_profile", "identity", "step_leaky")
    ]
    return specs


def grad_check_model(seed: int, index: int):
    """Model ``index`` of the seeded check matrix, with inputs and targets.

    Layer activations cycle through :func:`grad_check_specs` so that twenty
    consecutive models cover every family; every fifth model uses complex
    mixing weights.
    """
    specs = grad_check_specs()
    rng = random_stream(seed, "gradcheck", index)
    n = int(rng.choice([2, 4]))
    widths = [int(w) for w in rng.integers(1, 4, size=3)]
    acts = [specs[(2 * index) % len(specs)], specs[(2 * index + 1) % len(specs)]]
    m = init_model(widths, n, acts, seed=derive_seed(seed, "gradcheck-init", index), complex_weights=index % 5 == 4)
    for p in m.layers:
        p.kappas = rng.normal(0.5, 0.5, size=p.m_out)
    x = random_vector(rng, (4, widths[0], n), scale=1.0 / np.sqrt(n))
    target = random_vector(rng, (4, widths[-1], n), scale=0.5 / np.sqrt(n))
    return m, x, target


def grad_check_audit(seed: int = 0, models: int = 20, fd_step: float = 1e-6) -> dict:
    t0 = time.perf_counter()
    rows = []
    for i in range(models):
        m, x, target = grad_check_model(seed, i)
        rep = grad_check(m, x, target, fd_step)
        rows.append({
            "model": i,
            "activations": [p.activation.label for p in m.layers],
            "widths": m.widths,
            "vector_dim": m.vector_dim,
            "complex_weights": m.complex_weights,
            "checked": len(rep.checked),
            "flagged": len(rep.flagged),
            "max_error": rep.max_error,
            "worst": [
                {"layer": e.layer, "param": e.name, "index": list(e.index), "analytic": e.analytic,
                 "numeric": e.numeric, "error": e.error}
                for e in rep.worst(3)
            ],
            "pass": rep.passed,
        })
    return {
        "seed": seed,
        "models": rows,
        "pass": all(r["pass"] for r in rows),
        "runtime_s": time.perf_counter() - t0,
    }
