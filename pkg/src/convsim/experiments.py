"""Monte-Carlo harness: minimize a kernel objective and watch feature-map similarity.

Each episode draws ``K1, K2 ~ U(-1, 1)^N`` and ``X ~ U(0, 1)^M`` from its own
random stream, minimizes either the kernel similarity ``<K1, K2>^2`` or the
Convolutional Similarity of the pair for a fixed number of iterations, and
records both the objective and the squared feature-map inner product at every
iteration. Episodes are independent, so they are stepped together as rows of
one batch.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import artifacts
from .loss import conv_sim_pair, conv_sim_pair_grad, kernel_similarity, kernel_similarity_grad
from .numerics import RngStream, UndefinedCorrelation, pearson, sample_uniform
from .optim import OptimizerConfig, make_optimizer
from .signal import PaddingSpec, feature_inner_product, resolve_padding

log = logging.getLogger(__name__)

OBJECTIVES = ("kernel_similarity", "conv_sim")
UNCHANGED_RTOL = 1e-12


class EmptySummaryError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    objective: str
    N: int
    optimizer: OptimizerConfig
    iters: int
    M: int = 64
    pad: str | int = "full"
    episodes: int = 1000
    base_seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if not 1 <= self.N <= self.M:
            raise ValueError(f"need 1 <= N <= M, got N={self.N}, M={self.M}")
        resolve_padding(self.pad, self.N)

    @property
    def padding(self) -> int:
        return resolve_padding(self.pad, self.N)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        opt = d.pop("optimizer")
        if not isinstance(opt, OptimizerConfig):
            opt = OptimizerConfig(**opt)
        return cls(optimizer=opt, **d)


@dataclass
class EpisodeTrace:
    """Per-iteration objective and feature-map similarity for one episode.

    Entry ``t`` is measured before update ``t``; an episode whose gradient goes
    non-finite is marked ``dropped`` and its remaining entries are NaN.
    """

    episode: int
    objective_values: np.ndarray
    fm_similarity: np.ndarray
    dropped: bool = False
    diverged_at: int | None = None

    @property
    def initial_fm(self) -> float:
        return float(self.fm_similarity[0])

    @property
    def final_fm(self) -> float:
        return float(self.fm_similarity[-1])

    @property
    def direction(self) -> int:
        """-1 decrease, +1 increase, 0 unchanged (within ``UNCHANGED_RTOL``)."""
        a, b = self.initial_fm, self.final_fm
        if abs(b - a) <= UNCHANGED_RTOL * abs(a):
            return 0
        return -1 if b < a else 1

    def relative_change(self) -> float:
        """Magnitude of the change as a percentage of the initial value."""
        a, b = self.initial_fm, self.final_fm
        return 100.0 * abs(b - a) / a if a > 0 else float("inf")


@dataclass
class MetricsSummary:
    corr_mean: float
    corr_std: float
    reduction_frequency: float
    decrease_mean: float
    decrease_std: float
    increase_mean: float
    increase_std: float
    dropped_episodes: int
    episodes: int = 0
    decreased: int = 0
    increased: int = 0
    unchanged: int = 0
    undefined_correlations: int = 0

    COLUMNS = (
        "corr_mean", "corr_std", "reduction_frequency", "decrease_mean", "decrease_std",
        "increase_mean", "increase_std", "dropped_episodes", "episodes", "decreased",
        "increased", "unchanged", "undefined_correlations",
    )

    def row(self) -> list:
        return [getattr(self, c) for c in self.COLUMNS]


def _objective(kind):
    if kind == "kernel_similarity":
        return kernel_similarity, kernel_similarity_grad
    return conv_sim_pair, conv_sim_pair_grad


def _sample_episode(cfg: ExperimentConfig, index: int):
    gen = RngStream(cfg.base_seed, index).generator()
    k1 = sample_uniform(gen, -1.0, 1.0, cfg.N)
    k2 = sample_uniform(gen, -1.0, 1.0, cfg.N)
    x = sample_uniform(gen, 0.0, 1.0, cfg.M)
    return k1, k2, x


def run_episodes(cfg: ExperimentConfig, indices) -> list[EpisodeTrace]:
    """Run the given episodes as one vectorized batch."""
    indices = [int(i) for i in indices]
    if not indices:
        return []
    draws = [_sample_episode(cfg, i) for i in indices]
    k1 = np.stack([d[0] for d in draws])
    k2 = np.stack([d[1] for d in draws])
    x = np.stack([d[2] for d in draws])
    loss_fn, grad_fn = _objective(cfg.objective)
    pad = cfg.padding
    opt = make_optimizer(cfg.optimizer)

    e = len(indices)
    obj = np.full((e, cfg.iters), np.nan)
    fm = np.full((e, cfg.iters), np.nan)
    alive = np.ones(e, dtype=bool)
    diverged_at = np.full(e, -1)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(cfg.iters):
            loss = loss_fn(k1, k2, spatial_dims=1)
            ip = feature_inner_product(x, k1, k2, pad)
            g1, g2 = grad_fn(k1, k2, spatial_dims=1)
            ok = np.isfinite(loss) & np.isfinite(ip) & np.all(np.isfinite(g1), -1) & np.all(np.isfinite(g2), -1)
            newly = alive & ~ok
            diverged_at[newly] = t
            alive &= ok
            obj[alive, t] = loss[alive]
            fm[alive, t] = ip[alive] ** 2
            g1[~alive] = 0.0
            g2[~alive] = 0.0
            k1 = opt.step(k1, g1, key="k1")
            k2 = opt.step(k2, g2, key="k2")

    traces = []
    for row, idx in enumerate(indices):
        dropped = not alive[row]
        traces.append(
            EpisodeTrace(
                episode=idx,
                objective_values=obj[row].copy(),
                fm_similarity=fm[row].copy(),
                dropped=dropped,
                diverged_at=int(diverged_at[row]) if dropped else None,
            )
        )
    return traces


def run_episode(cfg: ExperimentConfig, episode_index: int) -> EpisodeTrace:
    return run_episodes(cfg, [episode_index])[0]


def _mean_std(values) -> tuple[float, float]:
    if len(values) == 0:
        return 0.0, 0.0
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


def summarize(traces: list[EpisodeTrace]) -> MetricsSummary:
    """Aggregate episodes into the correlation / reduction / change statistics.

    Percentages are taken over non-dropped episodes. Unchanged episodes count
    toward neither the decrease nor the increase statistics.
    """
    kept = sorted((t for t in traces if not t.dropped), key=lambda t: t.episode)
    dropped = len(traces) - len(kept)
    if not kept:
        raise EmptySummaryError(f"all {len(traces)} episodes were dropped")

    corrs = []
    undefined = 0
    for t in kept:
        try:
            corrs.append(pearson(t.objective_values, t.fm_similarity))
        except UndefinedCorrelation:
            undefined += 1
    if undefined:
        log.info("excluded %d episodes with constant trajectories from the correlation mean", undefined)

    dec, inc = [], []
    n_dec = n_inc = n_same = 0
    for t in kept:
        d = t.direction
        if d < 0:
            n_dec += 1
            dec.append(t.relative_change())
        elif d > 0:
            n_inc += 1
            change = t.relative_change()
            if np.isfinite(change):
                inc.append(change)
        else:
            n_same += 1

    corr_mean, corr_std = _mean_std(corrs)
    dec_mean, dec_std = _mean_std(dec)
    inc_mean, inc_std = _mean_std(inc)
    return MetricsSummary(
        corr_mean=corr_mean,
        corr_std=corr_std,
        reduction_frequency=100.0 * n_dec / len(kept),
        decrease_mean=dec_mean,
        decrease_std=dec_std,
        increase_mean=inc_mean,
        increase_std=inc_std,
        dropped_episodes=dropped,
        episodes=len(traces),
        decreased=n_dec,
        increased=n_inc,
        unchanged=n_same,
        undefined_correlations=undefined,
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summary: MetricsSummary
    traces: list[EpisodeTrace] = field(repr=False)
    paths: dict = field(default_factory=dict)


def _chunk_job(args):
    cfg_dict, idx = args
    return run_episodes(ExperimentConfig.from_dict(cfg_dict), idx)


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1, chunk: int = 250, order=None) -> ExperimentResult:
    """Run every episode, summarize, and optionally write CSV/JSON artifacts.

    ``order`` permutes the episode execution order; results do not depend on it.
    """
    started = time.time()
    indices = list(range(cfg.episodes)) if order is None else [int(i) for i in order]
    if sorted(indices) != list(range(cfg.episodes)):
        raise ValueError("order must be a permutation of the episode indices")
    chunks = [indices[i : i + chunk] for i in range(0, len(indices), chunk)]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_chunk_job, [(cfg.to_dict(), c) for c in chunks]))
    else:
        parts = [run_episodes(cfg, c) for c in chunks]
    traces = sorted((t for part in parts for t in part), key=lambda t: t.episode)
    summary = summarize(traces)
    result = ExperimentResult(cfg, summary, traces)
    if out_dir is not None:
        result.paths = write_artifacts(result, Path(out_dir), started=started)
    return result


TRACE_HEADER = ("episode", "iteration", "objective", "fm_similarity")
SUMMARY_HEADER = ("name", "objective", "N", "optimizer", "lr", "iters", "padding") + MetricsSummary.COLUMNS


def summary_row(cfg: ExperimentConfig, s: MetricsSummary) -> list:
    return [cfg.name, cfg.objective, cfg.N, cfg.optimizer.kind, cfg.optimizer.lr, cfg.iters, cfg.padding] + s.row()


def write_artifacts(result: ExperimentResult, out_dir: Path, started: float | None = None) -> dict:
    cfg = result.config
    stem = cfg.name or f"{cfg.objective}_n{cfg.N}_{cfg.optimizer.kind}"
    paths = {
        "traces": out_dir / f"{stem}_traces.csv",
        "summary": out_dir / f"{stem}_summary.csv",
        "manifest": out_dir / f"{stem}_manifest.json",
    }
    rows = (
        (t.episode, it, repr(float(o)), repr(float(f)))
        for t in result.traces
        for it, (o, f) in enumerate(zip(t.objective_values, t.fm_similarity))
    )
    artifacts.atomic_write_text(paths["traces"], artifacts.csv_text(TRACE_HEADER, rows))
    artifacts.atomic_write_text(paths["summary"], artifacts.csv_text(SUMMARY_HEADER, [summary_row(cfg, result.summary)]))
    artifacts.write_json(
        paths["manifest"],
        {
            "subcommand": "mc",
            "config": cfg.to_dict(),
            "seed": cfg.base_seed,
            "version": artifacts.tool_version(),
            "started": started,
            "finished": time.time(),
            "outputs": {k: str(v) for k, v in paths.items()},
            "summary": asdict(result.summary),
        },
    )
    return paths


# Hyperparameters per (N, optimizer): learning rate and iteration count.
_KERNEL_SIM_HP = {
    (3, "adam"): (0.1, 250), (3, "sgd"): (0.1, 250),
    (9, "adam"): (0.1, 250), (9, "sgd"): (0.1, 250),
    (16, "adam"): (0.1, 250), (16, "sgd"): (0.1, 300),
}
_CONV_SIM_HP = {
    (3, "adam"): (0.1, 300), (3, "sgd"): (0.2, 350),
    (9, "adam"): (0.1, 400), (9, "sgd"): (0.07, 550),
    (16, "adam"): (0.2, 450), (16, "sgd"): (0.035, 1500),
}
_VALID_PAD_HP = {
    (3, "adam"): (0.1, 300), (3, "sgd"): (0.1, 300),
    (9, "adam"): (0.1, 300), (9, "sgd"): (0.05, 400),
    (16, "adam"): (0.05, 500), (16, "sgd"): (0.01, 700),
}


def _build_presets() -> dict[str, ExperimentConfig]:
    out = {}
    for (n, kind), (lr, iters) in _KERNEL_SIM_HP.items():
        name = f"kernel_sim_n{n}_{kind}"
        out[name] = ExperimentConfig("kernel_similarity", n, OptimizerConfig(kind, lr), iters, name=name)
    for (n, kind), (lr, iters) in _CONV_SIM_HP.items():
        name = f"conv_sim_full_n{n}_{kind}"
        out[name] = ExperimentConfig("conv_sim", n, OptimizerConfig(kind, lr), iters, name=name)
    for (n, kind), (lr, iters) in _VALID_PAD_HP.items():
        name = f"conv_sim_valid_n{n}_{kind}"
        out[name] = ExperimentConfig("conv_sim", n, OptimizerConfig(kind, lr), iters, pad="valid", name=name)
    return out


PRESETS: dict[str, ExperimentConfig] = _build_presets()


def preset(name: str, **overrides) -> ExperimentConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
    return replace(cfg, **overrides) if overrides else cfg
