"""Command-line front end: ``verify``, ``mc``, ``train`` and ``minimize``.

Exit codes: 0 ok, 1 a check or run failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import artifacts, data as data_mod, experiments
from .loss import DegenerateBankError, KernelBank, conv_sim_bank, conv_sim_grad, conv_sim_grad_direct
from .optim import DivergenceError, OptimizerConfig, make_optimizer
from .signal import (
    auto_correlate_clipped,
    feature_inner_product,
    identity_rhs,
    kernel_cross_correlation,
    padded_decomposition,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("convsim")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config files

def parse_kv(text: str, source: str = "<config>") -> dict:
    """Parse flat ``key = value`` lines; values are read as JSON when possible, else as strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def load_config_source(spec: str, presets: dict) -> tuple[dict, str]:
    """Resolve ``--config``: a preset name, a JSON file, a key-value file, or a run manifest.

    Returns the flat config dict and a label for diagnostics.
    """
    if spec in presets:
        return {"preset": spec}, spec
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"--config {spec!r} is neither a preset ({', '.join(sorted(presets))}) nor a file")
    text = path.read_text()
    if text.lstrip().startswith("{"):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top-level JSON value must be an object")
        if "subcommand" in d and "config" in d:  # a run manifest
            d = d["config"]
        return d, str(path)
    return parse_kv(text, str(path)), str(path)


_OPT_KEYS = ("lr", "adam_beta1", "adam_beta2", "adam_eps", "momentum")


def _build(cls, d: dict, source: str):
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def experiment_config(d: dict, source: str) -> experiments.ExperimentConfig:
    d = dict(d)
    base = {}
    if "preset" in d:
        name = d.pop("preset")
        if name not in experiments.PRESETS:
            raise ConfigError(f"{source}: field 'preset': unknown preset {name!r}")
        base = experiments.PRESETS[name].to_dict()
    opt = dict(base.pop("optimizer", {}))
    given = d.pop("optimizer", None)
    if isinstance(given, dict):
        opt.update(given)
    elif given is not None:
        opt["kind"] = given
    for key in _OPT_KEYS:
        if key in d:
            opt[key] = d.pop(key)
    known = {f for f in experiments.ExperimentConfig.__dataclass_fields__}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown field(s) {', '.join(unknown)}")
    base.update(d)
    opt_cfg = _build(OptimizerConfig, opt, f"{source}: field 'optimizer'")
    for key in ("objective", "N", "iters"):
        if key not in base:
            raise ConfigError(f"{source}: missing required field {key!r}")
    return _build(experiments.ExperimentConfig, {**base, "optimizer": opt_cfg}, source)


@dataclass(frozen=True)
class TrainRun:
    """Everything a ``train`` invocation needs besides the data directory."""

    arch: str = "cnn1"
    data: str = "cifar10"  # or "synthetic"
    train_count: int = 5000
    test_count: int = 1000
    subset_seed: int = 0
    model_seed: int = 0
    train: dict = field(default_factory=dict)

    def train_config(self):
        from .nn.train import TrainConfig
        return TrainConfig.from_dict(self.train)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train_config().to_dict()
        return d


def _train_presets() -> dict[str, dict]:
    sgd = {"kind": "sgd", "lr": 0.01}
    adam = {"kind": "adam", "lr": 0.001}
    out = {}
    for arch in ("cnn1", "cnn2"):
        common = {"task_optimizer": sgd, "convsim_optimizer": adam, "epochs": 10, "batch_size": 64}
        out[f"{arch}_baseline"] = {"arch": arch, "train": {**common}}
        out[f"{arch}_I500"] = {"arch": arch, "train": {**common, "I": 500}}
        out[f"{arch}_beta"] = {"arch": arch, "train": {**common, "beta": 0.001}}
        out[f"{arch}_full_baseline"] = {"arch": arch, "train_count": 50000, "test_count": 10000,
                                        "train": {**common, "epochs": 100, "batch_size": 512}}
        out[f"{arch}_full_I500"] = {"arch": arch, "train_count": 50000, "test_count": 10000,
                                    "train": {**common, "epochs": 100, "batch_size": 512, "I": 500}}
    out["synthetic_cnn1_baseline"] = {"arch": "cnn1", "data": "synthetic", "train_count": 1000, "test_count": 200,
                                      "train": {"task_optimizer": sgd, "epochs": 3, "batch_size": 64}}
    out["synthetic_cnn1_I500"] = {"arch": "cnn1", "data": "synthetic", "train_count": 1000, "test_count": 200,
                                  "train": {"task_optimizer": sgd, "convsim_optimizer": adam, "epochs": 3,
                                            "batch_size": 64, "I": 500}}
    out["synthetic_tiny"] = {"arch": "tiny32", "data": "synthetic", "train_count": 200, "test_count": 50,
                             "train": {"task_optimizer": sgd, "convsim_optimizer": adam, "epochs": 3,
                                       "batch_size": 32, "I": 20}}
    return out


TRAIN_PRESETS = _train_presets()

_TRAIN_KEYS = ("I", "beta", "epochs", "batch_size", "seed", "task_optimizer", "convsim_optimizer")


def train_run(d: dict, source: str) -> TrainRun:
    d = dict(d)
    base = {"train": {}}
    if "preset" in d:
        name = d.pop("preset")
        if name not in TRAIN_PRESETS:
            raise ConfigError(f"{source}: field 'preset': unknown preset {name!r}")
        base = json.loads(json.dumps(TRAIN_PRESETS[name]))
    tr = base.setdefault("train", {})
    tr.update(d.pop("train", {}) or {})
    for key in _TRAIN_KEYS:
        if key in d:
            tr[key] = d.pop(key)
    for prefix, key in (("task", "task_optimizer"), ("convsim", "convsim_optimizer")):
        for sub in ("kind",) + _OPT_KEYS:
            flat = f"{prefix}_{sub}"
            if flat in d:
                tr[key] = {**tr.get(key, {}), sub: d.pop(flat)}
    unknown = sorted(set(d) - set(TrainRun.__dataclass_fields__))
    if unknown:
        raise ConfigError(f"{source}: unknown field(s) {', '.join(unknown)}")
    base.update(d)
    run = _build(TrainRun, base, source)
    if run.data not in ("cifar10", "synthetic"):
        raise ConfigError(f"{source}: field 'data' must be 'cifar10' or 'synthetic', got {run.data!r}")
    from .nn.model import ARCHITECTURES
    if run.arch not in ARCHITECTURES:
        raise ConfigError(f"{source}: field 'arch' must be one of {sorted(ARCHITECTURES)}")
    try:
        run.train_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: field 'train': {exc}") from None
    return run


def _apply_sets(d: dict, sets: list[str] | None) -> dict:
    d = dict(d)
    for i, item in enumerate(sets or [], 1):
        more = parse_kv(item, f"--set #{i}")
        d.update(more)
    return d


def _manifest(subcommand, config, seed, started, outputs, **extra) -> dict:
    return {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "version": artifacts.tool_version(),
        "started": started,
        "finished": time.time(),
        "outputs": {k: str(v) for k, v in outputs.items()},
        **extra,
    }


# ---------------------------------------------------------------- verify

@dataclass
class CheckResult:
    name: str
    max_residual: float = 0.0
    tolerance: float = 0.0
    trials: int = 0
    failure: dict | None = None

    @property
    def passed(self) -> bool:
        return self.failure is None


def _record(res: CheckResult, residual: float, case: dict):
    res.trials += 1
    if not np.isfinite(residual) or residual > res.max_residual:
        res.max_residual = float(residual)
    if (not np.isfinite(residual) or residual > res.tolerance) and res.failure is None:
        res.failure = {"check": res.name, "residual": float(residual), "tolerance": res.tolerance, **case}


def _fd_bank_grad(w, h=1e-6):
    g = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        o = w[idx]
        w[idx] = o + h
        a = conv_sim_bank(w).value
        w[idx] = o - h
        b = conv_sim_bank(w).value
        w[idx] = o
        g[idx] = (a - b) / (2 * h)
    return g


def run_checks(trials=1000, n_range=(1, 16), m_range=(8, 64), tolerance=1e-10, seed=0,
               rhs=None, fd_every=50, fd_tolerance=1e-6) -> list[CheckResult]:
    """Randomized identity, decomposition, gradient and certificate checks.

    ``rhs(x, k1, k2)`` replaces the correlation-domain side of the identity
    (used to confirm that a broken implementation is caught).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rhs = rhs or identity_rhs
    rng = np.random.default_rng(seed)
    ident = CheckResult("identity", tolerance=tolerance)
    decomp = CheckResult("decomposition", tolerance=tolerance)
    grad = CheckResult("gradient", tolerance=tolerance)
    grad_fd = CheckResult("gradient_fd", tolerance=fd_tolerance)
    cert0 = CheckResult("certificate_exact", tolerance=tolerance)
    cert_b = CheckResult("certificate_bound", tolerance=tolerance)
    for t in range(trials):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        m = int(rng.integers(max(m_range[0], n), m_range[1] + 1))
        x = rng.uniform(-1, 1, m)
        k1 = rng.uniform(-1, 1, n)
        k2 = rng.uniform(-1, 1, n)
        case = {"trial": t, "M": m, "N": n, "x": x.tolist(), "k1": k1.tolist(), "k2": k2.tolist()}

        lhs = feature_inner_product(x, k1, k2, "full")
        _record(ident, abs(lhs - rhs(x, k1, k2)) / max(1.0, abs(lhs)), case)

        p = int(rng.integers(0, n))
        d = padded_decomposition(x, k1, k2, p)
        r = d.residual / max(1.0, abs(d.lhs))
        if p == n - 1 and (d.A != 0.0 or d.B != 0.0):
            r = float("inf")
        _record(decomp, r, {**case, "P": p})

        s, c = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        w = rng.uniform(-1, 1, (s, c, n))
        g = conv_sim_grad(w)
        g_ref = conv_sim_grad_direct(w)
        _record(grad, float(np.abs(g - g_ref).max() / max(1.0, np.abs(g_ref).max())),
                {"trial": t, "bank": w.tolist()})
        if t % fd_every == 0:
            g_fd = _fd_bank_grad(w.copy())
            _record(grad_fd, float(np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-8)),
                    {"trial": t, "bank": w.tolist()})

        # a pair with zero loss must give orthogonal feature maps for every input
        _record(cert0, abs(feature_inner_product(x, k1, np.zeros(n), "full")) / max(1.0, float(x @ x)), case)

        # otherwise |<F1,F2>| <= sqrt(L) * ||clipped autocorrelation||
        loss = float(np.sum(kernel_cross_correlation(k1, k2) ** 2))
        bound = np.sqrt(loss) * np.linalg.norm(auto_correlate_clipped(x, n).values)
        excess = max(0.0, abs(lhs) - bound) / max(1.0, bound)
        _record(cert_b, excess, case)
    return [ident, decomp, grad, grad_fd, cert0, cert_b]


def cmd_verify(args) -> int:
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if not (1 <= args.n_min <= args.n_max) or not (1 <= args.m_min <= args.m_max) or args.n_min > args.m_max:
        print("error: need 1 <= n-min <= n-max, 1 <= m-min <= m-max and n-min <= m-max", file=sys.stderr)
        return EXIT_USAGE
    started = time.time()
    cfg = {"trials": args.trials, "n_range": [args.n_min, args.n_max], "m_range": [args.m_min, args.m_max],
           "tolerance": args.tolerance, "seed": args.seed}
    if args.dry_run:
        print(json.dumps(cfg))
        return EXIT_OK
    results = run_checks(args.trials, (args.n_min, args.n_max), (args.m_min, args.m_max), args.tolerance, args.seed)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:18s} trials={r.trials:5d} max_residual={r.max_residual:.3e} tol={r.tolerance:.0e} {status}")
    failures = [r.failure for r in results if not r.passed]
    outputs = {}
    if args.out_dir:
        out = Path(args.out_dir)
        if failures:
            outputs["failure"] = out / "verify_failure.json"
            artifacts.write_json(outputs["failure"], failures[0])
        outputs["manifest"] = out / "verify_manifest.json"
        artifacts.write_json(outputs["manifest"], _manifest(
            "verify", cfg, args.seed, started, outputs,
            results=[{"check": r.name, "max_residual": r.max_residual, "tolerance": r.tolerance,
                      "trials": r.trials, "passed": r.passed} for r in results]))
    if failures:
        if not args.out_dir:
            print(json.dumps(failures[0]), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------- mc

def cmd_mc(args) -> int:
    try:
        d, source = load_config_source(args.config, experiments.PRESETS)
        d = _apply_sets(d, args.set)
        if args.seed is not None:
            d["base_seed"] = args.seed
        if args.episodes is not None:
            d["episodes"] = args.episodes
        cfg = experiment_config(d, source)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.dry_run:
        print(json.dumps(cfg.to_dict(), sort_keys=True))
        return EXIT_OK
    res = experiments.run_experiment(cfg, out_dir=args.out_dir, jobs=args.jobs)
    s = res.summary
    print(",".join(experiments.SUMMARY_HEADER))
    print(",".join(_fmt(v) for v in experiments.summary_row(cfg, s)))
    for k, p in res.paths.items():
        log.info("wrote %s: %s", k, p)
    return EXIT_OK


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


# ---------------------------------------------------------------- train

def _load_data(run: TrainRun, data_dir):
    if run.data == "synthetic":
        full = data_mod.synthetic_dataset(run.subset_seed, run.train_count + run.test_count)
        return full.take(slice(0, run.train_count)), full.take(slice(run.train_count, None))
    train_ds, test_ds = data_mod.load_cifar10(data_dir)
    return train_ds.subset(run.train_count, run.subset_seed), test_ds.subset(run.test_count, run.subset_seed)


def cmd_train(args) -> int:
    from .nn.model import build_model, cnn1, cnn2, load_checkpoint, save_checkpoint
    from .nn.train import TrainingLog, train

    history = optim_state = None
    try:
        if args.resume:
            model, meta, optim_state = load_checkpoint(args.resume)
            d, source = meta["run"], str(args.resume)
            history = TrainingLog.from_dict(meta["log"])
        else:
            if not args.config:
                raise ConfigError("--config is required unless --resume is given")
            d, source = load_config_source(args.config, TRAIN_PRESETS)
        d = _apply_sets(d, args.set)
        if args.seed is not None:
            d["seed"] = args.seed
            d["model_seed"] = args.seed
        run = train_run(d, source)
    except (ConfigError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    cfg = run.train_config()

    if args.dry_run:
        for name, build in (("cnn1", cnn1), ("cnn2", cnn2)):
            m = build()
            print(f"{name}: {m.parameter_count():,} parameters, flatten width {m.flatten_width}")
        model = build_model(run.arch, run.model_seed)
        print(f"selected {run.arch}: {model.parameter_count():,} parameters")
        print(json.dumps(run.to_dict(), sort_keys=True))
        return EXIT_OK

    try:
        train_ds, test_ds = _load_data(run, args.data_dir)
    except (FileNotFoundError, data_mod.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    started = time.time()
    out = Path(args.out_dir or ".")
    paths = {"log": out / "train_log.csv", "checkpoint": out / "checkpoint.npz", "manifest": out / "train_manifest.json"}
    if cfg.I > 0:
        paths["init_curve"] = out / "init_curve.csv"

    optimizer = make_optimizer(cfg.task_optimizer)
    if history is not None:
        optimizer.load_state_dict(optim_state)
    else:
        model = build_model(run.arch, run.model_seed)

    def checkpoint(log_, opt):
        save_checkpoint(paths["checkpoint"], model, {"run": run.to_dict(), "log": log_.to_dict()}, opt.state_dict())

    try:
        result = train(model, train_ds, cfg, test_ds, optimizer=optimizer, on_epoch=checkpoint, history=history)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL

    if not result.epochs:
        checkpoint(result, optimizer)
    artifacts.atomic_write_text(paths["log"], artifacts.csv_text(TrainingLog.HEADER, result.rows()))
    if "init_curve" in paths:
        artifacts.atomic_write_text(paths["init_curve"],
                                    artifacts.csv_text(("iteration", "conv_sim"), enumerate(result.init_curve)))
    artifacts.write_json(paths["manifest"], _manifest(
        "train", run.to_dict(), cfg.seed, started, paths,
        resumed_from=str(args.resume) if args.resume else None,
        data={"source": run.data, "train_count": train_ds.count, "test_count": test_ds.count,
              "preprocessing": "pixels scaled to [0, 1]"},
        init={"weights": "uniform(+-sqrt(6/fan_in))", "biases": "uniform(+-1/sqrt(fan_in))"},
        initial_conv_sim=result.initial_conv_sim, post_init_conv_sim=result.post_init_conv_sim))
    print(",".join(TrainingLog.HEADER))
    for row in result.rows():
        print(",".join(_fmt(v) for v in row))
    return EXIT_OK


# ---------------------------------------------------------------- minimize

def _parse_spatial(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"--N must look like '3' or '3x3', got {text!r}") from None
    if not dims or len(dims) > 2 or min(dims) < 1:
        raise ConfigError(f"--N must be one or two positive extents, got {text!r}")
    return dims


def residual_lags(w: np.ndarray) -> list[dict]:
    """Largest remaining cross-correlation value per kernel pair and where it sits."""
    from .loss import _pair_xcorr

    nd = w.ndim - 2
    out = []
    for i in range(w.shape[0]):
        for j in range(i + 1, w.shape[0]):
            best = (0.0, None)
            for c1 in range(w.shape[1]):
                for c2 in range(w.shape[1]):
                    c = _pair_xcorr(w[i, c1], w[j, c2], nd)
                    idx = np.unravel_index(int(np.argmax(np.abs(c))), c.shape)
                    if abs(c[idx]) >= best[0]:
                        lag = [int(k) - (s - 1) for k, s in zip(idx, w.shape[2:])]
                        best = (float(abs(c[idx])), {"c1": c1, "c2": c2, "lag": lag})
            out.append({"i": i, "j": j, "max_abs_xcorr": best[0], **(best[1] or {})})
    return out


def cmd_minimize(args) -> int:
    try:
        spatial = _parse_spatial(args.N)
        opt_cfg = OptimizerConfig(args.optimizer, args.lr)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.iters < 0:
        print("error: --iters must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    seed = 0 if args.seed is None else args.seed
    shape = (args.S, args.C) + spatial
    if args.init == "zeros":
        w = np.zeros(shape) if min(shape) > 0 else None
    else:
        rng = np.random.default_rng(seed)
        w = rng.uniform(-1, 1, shape) if min(shape) > 0 else None
    try:
        bank = KernelBank(w if w is not None else np.zeros((max(args.S, 0), max(args.C, 0)) + spatial))
        if bank.S < 2:
            raise DegenerateBankError(f"need at least two kernels, got S={bank.S}")
    except (DegenerateBankError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    cfg = {"S": args.S, "C": args.C, "spatial": list(spatial), "init": args.init,
           "optimizer": opt_cfg.to_dict(), "iters": args.iters, "seed": seed}
    if args.dry_run:
        print(json.dumps(cfg, sort_keys=True))
        return EXIT_OK

    started = time.time()
    w = bank.weights.copy()
    opt = make_optimizer(opt_cfg)
    losses = []
    changed_steps = 0
    try:
        for _ in range(args.iters):
            lv = conv_sim_bank(w, with_grad=True)
            losses.append(lv.value)
            nw = opt.step(w, lv.gradient)
            changed_steps += int(not np.array_equal(nw, w))
            w = nw
    except DivergenceError as exc:
        print(f"error: minimization diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    initial = conv_sim_bank(bank.weights).value
    final = conv_sim_bank(w).value
    report = {"initial_loss": initial, "final_loss": final, "iterations": args.iters,
              "iterations_with_change": changed_steps, "pairs": residual_lags(w)}
    print(f"initial_loss {initial:.6e}")
    print(f"final_loss   {final:.6e}")
    print(f"iterations   {args.iters} ({changed_steps} changed the bank)")
    for pr in report["pairs"]:
        print(f"pair ({pr['i']},{pr['j']}) max |xcorr| {pr['max_abs_xcorr']:.3e} at lag {pr.get('lag')}")
    if args.out_dir:
        out = Path(args.out_dir)
        paths = {"report": out / "minimize_report.json", "curve": out / "minimize_curve.csv",
                 "bank": out / "minimize_bank.json", "manifest": out / "minimize_manifest.json"}
        artifacts.write_json(paths["report"], report)
        artifacts.atomic_write_text(paths["curve"], artifacts.csv_text(("iteration", "conv_sim"), enumerate(losses)))
        artifacts.write_json(paths["bank"], {"initial": bank.weights, "final": w})
        artifacts.write_json(paths["manifest"], _manifest("minimize", cfg, seed, started, paths))
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--out-dir", default=None, help="directory for CSV/JSON artifacts")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (mc only)")
    common.add_argument("--dry-run", action="store_true", help="resolve the configuration, print it, and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="convsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="randomized identity and gradient checks")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--n-min", type=int, default=1)
    v.add_argument("--n-max", type=int, default=16)
    v.add_argument("--m-min", type=int, default=8)
    v.add_argument("--m-max", type=int, default=64)
    v.add_argument("--tolerance", type=float, default=1e-10)
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("mc", parents=[common], help="Monte-Carlo similarity experiment")
    m.add_argument("--config", required=True, help="preset name, key=value file, JSON file or run manifest")
    m.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    m.add_argument("--episodes", type=int, default=None)
    m.set_defaults(func=cmd_mc)

    t = sub.add_parser("train", parents=[common], help="train CNN1/CNN2 (baseline, iterative init, regularization)")
    t.add_argument("--config", default=None, help="preset name, key=value file, JSON file or run manifest")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    t.add_argument("--data-dir", default=None, help=f"CIFAR-10 binary directory (default ${data_mod.CIFAR10_ENV})")
    t.add_argument("--resume", default=None, help="continue from a checkpoint written by a previous run")
    t.set_defaults(func=cmd_train)

    z = sub.add_parser("minimize", parents=[common], help="minimize the loss of a random kernel bank")
    z.add_argument("--S", type=int, default=2, help="number of kernels")
    z.add_argument("--C", type=int, default=1, help="input channels")
    z.add_argument("--N", default="3", help="kernel extent, e.g. 3 or 3x3")
    z.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    z.add_argument("--lr", type=float, default=0.1)
    z.add_argument("--iters", type=int, default=300)
    z.add_argument("--init", choices=("uniform", "zeros"), default="uniform")
    z.set_defaults(func=cmd_minimize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
