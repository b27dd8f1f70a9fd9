"""Command-line entry point.

Exit codes: 0 pass, 1 audit failure, 2 usage error, 3 I/O or parse error,
4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from equivar_act.activations import FAMILIES
from equivar_act.harness import DEFAULT_DIMS, EQUIVARIANCE_TOL, equivariance_audit, grad_check_audit
from equivar_act.linalg import DomainError, apply_unitary, derive_seed, haar_unitary
from equivar_act.net import ModelFileError, equivariance_error, load_model, model_forward, save_model
from equivar_act.training import TASKS, DivergenceError, TrainConfig, dataset_loss, get_task, make_dataset, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    dims: tuple = DEFAULT_DIMS
    trials: int | None = None
    tolerance: float = EQUIVARIANCE_TOL
    families: tuple = ()
    task: str = "identity-fit"
    steps: int | None = None
    lr: float = 0.05
    momentum: float = 0.9
    out: str | None = None
    model: str | None = None
    apply_unitary: int | None = None

    def validate(self) -> None:
        if not self.dims or any(int(d) != d or d < 1 for d in self.dims):
            raise UsageError(f"--dim values must be positive integers, got {self.dims}")
        if self.trials is not None and self.trials < 1:
            raise UsageError("--trials must be >= 1")
        if not (self.tolerance >= 0 and math.isfinite(self.tolerance)):
            raise UsageError("--tolerance must be a finite number >= 0")
        bad = set(self.families) - set(FAMILIES)
        if bad:
            raise UsageError(f"unknown families {sorted(bad)}; choose from {', '.join(FAMILIES)}")
        if self.task not in TASKS:
            raise UsageError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.steps is not None and self.steps < 0:
            raise UsageError("--steps must be >= 0")
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise UsageError("--lr must be a finite number >= 0")
        if not 0 <= self.momentum < 1:
            raise UsageError("--momentum must be in [0, 1)")
        if self.command == "eval" and not self.model:
            raise UsageError("eval needs --model")


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equivar-act", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default values for any flag")
    common.add_argument("--seed", type=int, help="root seed (default: $EQUIVAR_SEED or 0)")
    common.add_argument("--out", help="output path (report file, or directory for train)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-equivariance", parents=[common], help="audit sigma(Uu) = U sigma(u)")
    p.add_argument("--dim", type=_int_list, dest="dims", help="comma-separated vector dimensions")
    p.add_argument("--trials", type=int, help="(u, U) pairs per dimension")
    p.add_argument("--tolerance", type=float, help="equivariance tolerance, scaled by max(1, ||u||)")
    p.add_argument("--families", type=_str_list, help="comma-separated activation families")

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--trials", type=int, help="number of seeded models")

    p = sub.add_parser("train", parents=[common], help="train on a synthetic task")
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)

    p = sub.add_parser("eval", parents=[common], help="evaluate a saved model")
    p.add_argument("--model", help="model JSON file")
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--apply-unitary", type=int, metavar="SEED", help="rotate the dataset by a Haar unitary first")
    return parser


_FILE_KEYS = {
    "seed": int, "dims": _int_list, "trials": int, "tolerance": float, "families": _str_list,
    "task": str, "steps": int, "lr": float, "momentum": float, "out": str, "model": str, "apply_unitary": int,
}


def _from_file(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise OSError(f"cannot read config {path}: {e.strerror or e}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path}: line {e.lineno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config {path}: expected a JSON object")
    out = {}
    for key, value in raw.items():
        name = key.replace("-", "_").lstrip("_")
        name = {"dim": "dims", "learning_rate": "lr"}.get(name, name)
        if name not in _FILE_KEYS:
            raise UsageError(f"config {path}: unknown key {key!r}")
        conv = _FILE_KEYS[name]
        if isinstance(value, list) and conv in (_int_list, _str_list):
            value = ",".join(str(v) for v in value)
        try:
            out[name] = conv(value)
        except (TypeError, ValueError, argparse.ArgumentTypeError) as e:
            raise UsageError(f"config {path}: bad value for {key!r}: {e}") from None
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge built-in defaults < $EQUIVAR_SEED < config file < flags."""
    values: dict = {}
    env_seed = os.environ.get("EQUIVAR_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"EQUIVAR_SEED must be an integer, got {env_seed!r}") from None
    if args.config:
        values.update(_from_file(args.config))
    for key in _FILE_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    cfg = RunConfig(command=args.command, **values)
    cfg.validate()
    return cfg


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def cmd_check_equivariance(cfg: RunConfig) -> int:
    report = equivariance_audit(
        seed=cfg.seed,
        dims=cfg.dims,
        trials=cfg.trials or 1000,
        tolerance=cfg.tolerance,
        families=cfg.families or None,
    )
    _write_json(report, cfg.out)
    worst = max(c["max_scaled_error"] for c in report["equivariance"]) if report["equivariance"] else 0.0
    status = "PASS" if report["pass"] else "FAIL"
    print(f"{status}: {len(report['equivariance'])} equivariance cases, worst scaled error {worst:.3e} "
          f"(tolerance {cfg.tolerance:.1e}), {report['runtime_s']:.1f} s", file=sys.stderr)
    return EXIT_OK if report["pass"] else EXIT_FAIL


def cmd_grad_check(cfg: RunConfig) -> int:
    report = grad_check_audit(seed=cfg.seed, models=cfg.trials or 20)
    _write_json(report, cfg.out)
    worst = max(r["max_error"] for r in report["models"])
    status = "PASS" if report["pass"] else "FAIL"
    print(f"{status}: {len(report['models'])} models, worst relative error {worst:.3e}", file=sys.stderr)
    return EXIT_OK if report["pass"] else EXIT_FAIL


def cmd_train(cfg: RunConfig) -> int:
    task = get_task(cfg.task)
    steps = task.steps if cfg.steps is None else cfg.steps
    tc = TrainConfig(learning_rate=cfg.lr, momentum=cfg.momentum, steps=steps, seed=cfg.seed)
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        model, history = train(tc, task)
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    runtime = time.perf_counter() - t0
    save_model(model, out / "model.json")
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for step, value in enumerate(history):
            w.writerow([step, repr(float(value))])
    ratio = history[-1] / history[0] if history[0] > 0 else 1.0
    print(json.dumps({
        "task": task.name,
        "steps": steps,
        "seed": cfg.seed,
        "initial_loss": history[0],
        "final_loss": history[-1],
        "ratio": ratio,
        "runtime_s": runtime,
        "model": str(out / "model.json"),
        "history": str(out / "history.csv"),
    }, indent=2))
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    model = load_model(cfg.model)
    task = get_task(cfg.task)
    if model.widths[0] != task.widths[0] or model.widths[-1] != task.widths[-1] or model.vector_dim != task.vector_dim:
        raise UsageError(f"model shape {model.widths} (n={model.vector_dim}) does not fit task {task.name}")
    x, target = make_dataset(task, cfg.seed)
    if cfg.apply_unitary is not None:
        U = haar_unitary(model.vector_dim, cfg.apply_unitary)
        x, target = apply_unitary(U, x), apply_unitary(U, target)
        probe = haar_unitary(model.vector_dim, derive_seed(cfg.apply_unitary, "eval-probe"))
    else:
        probe = haar_unitary(model.vector_dim, derive_seed(cfg.seed, "eval-probe"))
    result = {
        "model": cfg.model,
        "task": task.name,
        "seed": cfg.seed,
        "apply_unitary": cfg.apply_unitary,
        "loss": dataset_loss(model, x, target),
        "equivariance_error": equivariance_error(lambda z: model_forward(model, z), x, probe),
    }
    _write_json(result, cfg.out)
    return EXIT_OK


COMMANDS = {
    "check-equivariance": cmd_check_equivariance,
    "grad-check": cmd_grad_check,
    "train": cmd_train,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.command](cfg)
    except (UsageError, DomainError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ModelFileError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
