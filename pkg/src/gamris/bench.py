"""Experiment configuration, orchestration and result files.

Every experiment is a pure function of an :class:`ExperimentConfig` (which
carries the master seed).  Derived seeds come from
``numpy.random.SeedSequence(seed, spawn_key=...)`` with these keys:

* channel of realization ``r`` in sweep cell ``(n, d)``: ``(0, n, round(d * 2**20), r)``
* random-rotation search for that channel: ``(1, n, round(d * 2**20), r)``
* channel of SER realization ``r``: ``(2, r)`` (or ``channel_seed`` when pinned)
* Monte Carlo frames: :func:`gamris.xcvr.monte_carlo_ser` with the master seed
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._io import fmt
from .corrchan import (
    AttenuationSpec,
    RisGrid,
    build_correlation_matrix,
    reduce_to_equivalent,
    sample_channel,
)
from .echelon import Method, decompose
from .errors import ConfigError
from .hexlat import write_constellation_csv
from .xcvr import SerConfig, med_for_target_ser, monte_carlo_ser, plan_subchannels, write_ser_csv

__all__ = [
    "ExperimentConfig",
    "PRESETS",
    "RreCell",
    "RreReport",
    "load_config",
    "config_hash",
    "derive_seed",
    "channel_seed_for",
    "rre_sweep",
    "write_rre_csv",
    "run_rre_bench",
    "run_ser_sim",
    "run_constellation_dump",
    "write_manifest",
]

RRE_COLUMNS = (
    "n", "d_over_lambda", "method", "realizations", "rre_mean", "rre_median", "rre_p10", "rre_p90", "seconds_mean",
)
_SPACING_KEY = 2**20


@dataclass
class ExperimentConfig:
    """All knobs of an experiment; lengths in wavelengths, attenuations in dB."""

    n_x: int = 32
    n_y: int = 32
    spacing: float = 0.125
    n_r: int = 4
    mu_los_db: float = -60.0
    mu_rr_db: float = -5.0
    mu_tr_db: float = -5.0
    snr_db: list = field(default_factory=lambda: [49.0])
    design_snr_db: float = 49.0
    n_sweep: list = field(default_factory=lambda: [64, 256])
    spacing_sweep: list = field(default_factory=lambda: [0.125])
    methods: list = field(default_factory=lambda: ["cp", "gram_schmidt", "random_rotation"])
    realizations: int = 100
    rr_trials: int = 10000
    frames: int = 10000
    med_target: float | None = None
    med_target_ser: float = 1e-3
    ser_mode: str = "single"
    channel_seed: int | None = None
    seed: int = 0
    out: str = "results"
    threads: int = 1
    batch_size: int = 1 << 16
    record_timing: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n_x", "n_y", "n_r", "realizations", "rr_trials", "threads", "batch_size"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if not isinstance(self.frames, int) or self.frames < 0:
            raise ConfigError(f"frames must be a nonnegative integer, got {self.frames!r}")
        if not self.snr_db:
            raise ConfigError("snr_db must list at least one SNR")
        if not self.n_sweep or not self.spacing_sweep or not self.methods:
            raise ConfigError("n_sweep, spacing_sweep and methods must be nonempty")
        for d in [self.spacing, *self.spacing_sweep]:
            if not (isinstance(d, (int, float)) and math.isfinite(d) and d > 0):
                raise ConfigError(f"spacings must be positive, got {d!r}")
        for n in self.n_sweep:
            if not isinstance(n, int) or n < 1:
                raise ConfigError(f"n_sweep entries must be positive integers, got {n!r}")
        for m in self.methods:
            try:
                Method(m)
            except ValueError:
                raise ConfigError(f"unknown method {m!r}; choose from {[x.value for x in Method]}") from None
        smallest_n = min([self.n_x * self.n_y, *self.n_sweep])
        if self.n_r > smallest_n + 1:
            raise ConfigError(
                f"n_r={self.n_r} exceeds n+1={smallest_n + 1}: the equivalent channel rank tau would exceed n_check"
            )
        if self.ser_mode not in ("single", "averaged"):
            raise ConfigError(f"ser_mode must be 'single' or 'averaged', got {self.ser_mode!r}")
        if self.med_target is not None and not self.med_target > 0:
            raise ConfigError(f"med_target must be positive, got {self.med_target}")
        if not 0 < self.med_target_ser < 1:
            raise ConfigError(f"med_target_ser must lie in (0, 1), got {self.med_target_ser}")
        if self.channel_seed is not None and not 0 <= self.channel_seed < 2**64:
            raise ConfigError("channel_seed must be an unsigned 64-bit integer")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def grid(self) -> RisGrid:
        return RisGrid(self.n_x, self.n_y, self.spacing)

    @property
    def attenuation(self) -> AttenuationSpec:
        return AttenuationSpec(self.mu_los_db, self.mu_rr_db, self.mu_tr_db)

    @property
    def received_med(self) -> float:
        return self.med_target if self.med_target is not None else med_for_target_ser(self.med_target_ser)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        if "config" in obj and "config_hash" in obj:
            obj = obj["config"]  # a run manifest
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


PRESETS = {
    "fig3-small": dict(n_sweep=[64, 256], spacing_sweep=[0.125], realizations=100),
    "fig3-paper": dict(n_sweep=[64, 256, 1024], spacing_sweep=[0.5, 0.25, 0.125], realizations=1000),
    "fig5": dict(snr_db=[37.0, 39.0, 41.0, 43.0, 45.0, 47.0, 49.0], ser_mode="single", channel_seed=0,
                 frames=100000),
    "fig6": dict(snr_db=[37.0, 39.0, 41.0, 43.0, 45.0, 47.0, 49.0], ser_mode="averaged", realizations=1000,
                 frames=10000),
    "table1": dict(snr_db=[49.0], design_snr_db=49.0, channel_seed=0),
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return ExperimentConfig(**PRESETS[name])


def load_config(path) -> dict:
    """Read a JSON config (or manifest) file, raising ConfigError with line/column on bad JSON."""
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if isinstance(obj, dict) and "config" in obj and "config_hash" in obj:
        obj = obj["config"]
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return obj


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def derive_seed(master: int, *key: int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def _spacing_key(d: float) -> int:
    return int(round(d * _SPACING_KEY))


def channel_seed_for(cfg: ExperimentConfig, n: int, d: float, r: int) -> int:
    return derive_seed(cfg.seed, 0, n, _spacing_key(d), r)


def ser_channel_seed(cfg: ExperimentConfig, r: int) -> int:
    if cfg.channel_seed is not None and cfg.ser_mode == "single":
        return int(cfg.channel_seed)
    return derive_seed(cfg.seed, 2, r)


@dataclass
class RreCell:
    n: int
    spacing: float
    method: str
    values: np.ndarray
    seconds: np.ndarray
    seeds: list

    def row(self, record_timing: bool) -> list:
        v = self.values
        return [self.n, self.spacing, self.method, v.size, float(np.mean(v)), float(np.median(v)),
                float(np.percentile(v, 10)), float(np.percentile(v, 90)),
                float(np.mean(self.seconds)) if record_timing else None]


@dataclass
class RreReport:
    cells: list

    def cell(self, n: int, spacing: float, method: str) -> RreCell:
        for c in self.cells:
            if c.n == n and math.isclose(c.spacing, spacing) and c.method == Method(method).value:
                return c
        raise KeyError((n, spacing, method))


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def rre_sweep(cfg: ExperimentConfig, log=None) -> RreReport:
    """RRE of every configured method over the (n, d) sweep."""
    cells = []
    for n in cfg.n_sweep:
        for d in cfg.spacing_sweep:
            grid = RisGrid.square_ish(n, d)
            corr = build_correlation_matrix(grid)
            seeds = [channel_seed_for(cfg, n, d, r) for r in range(cfg.realizations)]

            def one(r):
                eq = reduce_to_equivalent(sample_channel(grid, cfg.attenuation, cfg.n_r, corr, seeds[r]))
                out = {}
                for m in cfg.methods:
                    kw = {}
                    if Method(m) is Method.RANDOM_ROTATION:
                        kw = dict(trials=cfg.rr_trials, seed=derive_seed(cfg.seed, 1, n, _spacing_key(d), r))
                    t0 = time.perf_counter()
                    dec = decompose(eq, m, **kw)
                    out[m] = (dec.rre, time.perf_counter() - t0)
                return out

            results = _map(one, list(range(cfg.realizations)), cfg.threads)
            for m in cfg.methods:
                cells.append(RreCell(
                    n=n, spacing=float(d), method=Method(m).value,
                    values=np.array([res[m][0] for res in results]),
                    seconds=np.array([res[m][1] for res in results]),
                    seeds=seeds,
                ))
            if log:
                log(f"rre-bench n={n} d={d}: {cfg.realizations} realizations done")
    return RreReport(cells)


def write_rre_csv(path, report: RreReport, record_timing: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RRE_COLUMNS)
        for c in report.cells:
            w.writerow([fmt(v) for v in c.row(record_timing)])


def write_manifest(path, cfg: ExperimentConfig, command: str, outputs, realization_seeds=None) -> dict:
    manifest = {
        "command": command,
        "version": f"gamris-{__version__}",
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "outputs": sorted(str(Path(o).name) for o in outputs),
        "realization_seeds": realization_seeds or {},
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _ensure_out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_rre_bench(cfg: ExperimentConfig, log=None) -> RreReport:
    out = _ensure_out(cfg)
    report = rre_sweep(cfg, log)
    csv_path = out / "rre.csv"
    write_rre_csv(csv_path, report, cfg.record_timing)
    seeds = {}
    for c in report.cells:
        seeds.setdefault(f"n={c.n},d={c.spacing!r}", [str(s) for s in c.seeds])
    write_manifest(out / "manifest.json", cfg, "rre-bench", [csv_path], seeds)
    return report


def _plans_for_seed(cfg, corr, seed):
    eq = reduce_to_equivalent(sample_channel(cfg.grid, cfg.attenuation, cfg.n_r, corr, seed))
    med = cfg.received_med
    gam = plan_subchannels(decompose(eq, Method.CP), cfg.design_snr_db, med)
    qr = plan_subchannels(decompose(eq, Method.QR), cfg.design_snr_db, med)
    return gam, qr


def run_ser_sim(cfg: ExperimentConfig, log=None) -> dict:
    """Monte Carlo SER of GAM and QR-SIC; writes one CSV per scheme plus a manifest."""
    out = _ensure_out(cfg)
    corr = build_correlation_matrix(cfg.grid)
    count = 1 if cfg.ser_mode == "single" else cfg.realizations
    seeds = [ser_channel_seed(cfg, r) for r in range(count)]
    plans = {"gam": [], "qr_sic": []}
    for s in seeds:
        gam, qr = _plans_for_seed(cfg, corr, s)
        plans["gam"].append(gam)
        plans["qr_sic"].append(qr)
    sc = SerConfig(snr_db=list(cfg.snr_db), frames=cfg.frames, seed=cfg.seed, batch_size=cfg.batch_size,
                   threads=cfg.threads)
    reports, paths = {}, []
    for scheme, ps in plans.items():
        reports[scheme] = monte_carlo_ser(ps, sc)
        path = out / f"ser_{scheme}.csv"
        write_ser_csv(path, reports[scheme])
        paths.append(path)
        if log:
            log(f"ser-sim {scheme}: " + ", ".join(f"{r.snr_db:g} dB -> {r.errors}/{r.trials}" for r in reports[scheme]))
    write_manifest(out / "manifest.json", cfg, "ser-sim", paths, {"channels": [str(s) for s in seeds]})
    return reports


def run_constellation_dump(cfg: ExperimentConfig, channel_seed=None, log=None) -> list:
    """Constellations of both transceivers for one pinned channel and a summary table."""
    out = _ensure_out(cfg)
    seed = channel_seed if channel_seed is not None else ser_channel_seed(cfg.replace(ser_mode="single"), 0)
    corr = build_correlation_matrix(cfg.grid)
    gam, qr = _plans_for_seed(cfg, corr, seed)
    rows, paths = [], []
    for plan in (gam, qr):
        for sub in plan.subchannels:
            if sub.constellation is not None:
                path = out / f"{plan.scheme}_sub{sub.index + 1}.csv"
                write_constellation_csv(path, sub.constellation)
                paths.append(path)
            rows.append([plan.scheme, sub.index + 1, sub.mode, sub.cardinality, sub.bits])
        total = math.prod(s.cardinality for s in plan.subchannels)
        rows.append([plan.scheme, "total", "", total, plan.total_bits])
    summary = out / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "subchannel", "mode", "cardinality", "mod_order_bits"])
        for row in rows:
            w.writerow([fmt(v) for v in row])
    paths.append(summary)
    write_manifest(out / "manifest.json", cfg, "constellation-dump", paths, {"channel": str(seed)})
    if log:
        log(f"constellation-dump: GAM {gam.total_bits:.2f} bits, QR-SIC {qr.total_bits:.2f} bits")
    return rows
