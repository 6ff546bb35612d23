"""Run configuration, feature ingestion, multi-chain orchestration and reports.

File formats
------------
features (text)
    One frame per row, values separated by whitespace or commas; blank
    lines and lines starting with ``#`` are ignored.
features (binary)
    16-byte little-endian header ``b"SHDP"``, ``u32 rows``, ``u32 cols``,
    ``u32 reserved`` (zero), followed by ``rows * cols`` float32 values in
    row-major order.
mask
    One integer per frame; ``1`` excludes the frame, ``0`` keeps it.
labels
    One integer label per line.
segments
    One line per segment, ``start_block end_block label`` with ``end_block``
    exclusive, plus a JSON sidecar mapping each block to its frame range.
trace
    JSON lines, one record per sweep.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .estimator import EMISSIONS, SAMPLERS, StickyHDPHMM
from .exceptions import ConfigError, FormatError, StickyHDPError
from .metrics import (
    SegmentList,
    frame_der,
    hamming_matched,
    min_expected_hamming,
)
from .model import HyperPriors

log = logging.getLogger(__name__)

MAGIC = b"SHDP"
HEADER = struct.Struct("<4sIII")


# --------------------------------------------------------------------- config
@dataclass
class RunConfig:
    """Everything needed to reproduce a run."""

    features: str = ""
    feature_format: str = "auto"
    mask: Optional[str] = None
    truth: Optional[str] = None
    heldout: List[str] = field(default_factory=list)
    output: str = "run"
    sampler: str = "blocked"
    emission: str = "gaussian"
    L: int = 20
    Lprime: int = 20
    sweeps: int = 1000
    chains: int = 1
    seed: int = 0
    workers: int = 1
    sticky: bool = True
    tied: bool = False
    fixed_beta: bool = False
    learn_hyper: bool = True
    init_gamma: float = 1.0
    init_alpha_plus_kappa: float = 1.0
    init_rho: float = 0.5
    init_sigma: float = 1.0
    priors: dict = field(default_factory=lambda: asdict(HyperPriors()))
    pseudocount: float = 0.01
    dof: float = 3.0
    scale_factor: float = 0.75
    mean_cov_factor: float = 1.0
    expected_cov_factor: float = 0.75
    dirichlet: float = 1.0
    vocab: Optional[int] = None
    block_width: int = 1
    frames_per_state: int = 1
    z_every: int = 100
    burn_fraction: float = 0.5
    loglik_tolerance: float = 0.1

    def validate(self, check_files=True):
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {SAMPLERS}")
        if self.emission not in EMISSIONS:
            raise ConfigError(f"emission must be one of {EMISSIONS}")
        for name in ("L", "Lprime", "sweeps", "chains", "workers", "block_width",
                     "frames_per_state", "z_every"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.L < 2:
            raise ConfigError("L must be at least 2")
        if not 0.0 <= self.burn_fraction < 1.0:
            raise ConfigError("burn_fraction must lie in [0, 1)")
        if self.feature_format not in ("auto", "text", "binary"):
            raise ConfigError("feature_format must be auto, text or binary")
        if self.emission == "multinomial" and self.block_width != 1:
            raise ConfigError("block averaging is meaningless for symbol data")
        if self.sampler.startswith("direct") and self.frames_per_state != 1:
            raise ConfigError("tied frames need a blocked sampler")
        try:
            HyperPriors(**self.priors)
        except TypeError as exc:
            raise ConfigError(f"bad priors: {exc}") from exc
        if check_files:
            paths = [self.features] + [p for p in (self.mask, self.truth) if p] + self.heldout
            for p in paths:
                if not p or not Path(p).is_file():
                    raise ConfigError(f"file not found: {p!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path):
        cfg = cls.loads(Path(path).read_text())
        base = Path(path).resolve().parent
        for name in ("features", "mask", "truth"):
            value = getattr(cfg, name)
            if value and not Path(value).is_absolute():
                setattr(cfg, name, str(base / value))
        cfg.heldout = [p if Path(p).is_absolute() else str(base / p) for p in cfg.heldout]
        return cfg


# ------------------------------------------------------------------ file I/O
def write_binary_features(path, X):
    X = np.asarray(X, dtype="<f4")
    if X.ndim == 1:
        X = X[:, None]
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, X.shape[0], X.shape[1], 0))
        fh.write(np.ascontiguousarray(X).tobytes())


def read_binary_features(path):
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise FormatError(f"{path}: file shorter than the 16-byte header")
    magic, rows, cols, _ = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise FormatError(f"{path}: header says {rows}x{cols} but payload has "
                          f"{(len(data) - HEADER.size) / 4:g} values")
    return np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(rows, cols).copy()


def write_text_features(path, X):
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    fmt = "%d" if np.issubdtype(X.dtype, np.integer) else "%.10g"
    np.savetxt(path, X, fmt=fmt)


def read_text_features(path):
    rows, width = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            try:
                values = [float(v) for v in parts]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric value ({exc})") from exc
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} columns, got {len(values)}")
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def read_labels(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                out.append(int(line))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: expected an integer") from exc
    return np.asarray(out, dtype=np.int64)


def write_labels(path, labels):
    np.savetxt(path, np.asarray(labels, dtype=np.int64), fmt="%d")


def read_mask(path, n_frames):
    mask = read_labels(path)
    if mask.size != n_frames:
        raise FormatError(f"{path}: mask has {mask.size} entries for {n_frames} frames")
    if np.any((mask != 0) & (mask != 1)):
        bad = int(np.flatnonzero((mask != 0) & (mask != 1))[0]) + 1
        raise FormatError(f"{path}:{bad}: mask entries must be 0 or 1")
    return mask.astype(bool)


def _detect_format(path, feature_format):
    if feature_format != "auto":
        return feature_format
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == MAGIC else "text"


# ------------------------------------------------------------- preprocessing
@dataclass
class Features:
    """Preprocessed observations and their link back to raw frames."""

    X: np.ndarray
    block_frames: List[np.ndarray]
    n_frames: int
    mask: Optional[np.ndarray] = None


def ingest_features(path, feature_format="auto", block_width=1, mask=None) -> Features:
    """Read frames, drop masked ones and average non-overlapping blocks.

    ``mask`` may be a path or a boolean array (True = excluded).  A trailing
    partial block is averaged over the frames it has.
    """
    fmt = _detect_format(path, feature_format)
    raw = read_binary_features(path) if fmt == "binary" else read_text_features(path)
    n = raw.shape[0]
    if mask is None:
        excluded = np.zeros(n, dtype=bool)
    elif isinstance(mask, (str, Path)):
        excluded = read_mask(mask, n)
    else:
        excluded = np.asarray(mask, dtype=bool)
        if excluded.shape != (n,):
            raise FormatError(f"mask has {excluded.size} entries for {n} frames")
    kept = np.flatnonzero(~excluded)
    if kept.size == 0:
        raise FormatError("every frame is masked")
    if block_width < 1:
        raise ConfigError("block_width must be positive")
    blocks = [kept[i:i + block_width] for i in range(0, kept.size, block_width)]
    X = np.array([raw[b].mean(axis=0) for b in blocks]) if block_width > 1 else raw[kept]
    return Features(X, blocks, n, excluded)


def tie_min_duration(n_blocks, frames_per_state=2) -> np.ndarray:
    """Hidden-step index of each block when ``frames_per_state`` blocks share a state."""
    if frames_per_state < 1:
        raise ConfigError("frames_per_state must be >= 1")
    return np.arange(n_blocks, dtype=np.int64) // frames_per_state


def blocks_to_frames(block_labels, feats: Features, fill=-1):
    out = np.full(feats.n_frames, fill, dtype=np.int64)
    for label, frames in zip(block_labels, feats.block_frames):
        out[frames] = label
    return out


def frames_to_blocks(frame_labels, feats: Features):
    """Majority label of each block's frames (ties to the smallest label)."""
    out = []
    for frames in feats.block_frames:
        vals, counts = np.unique(frame_labels[frames], return_counts=True)
        out.append(vals[np.argmax(counts)])
    return np.asarray(out, dtype=np.int64)


# -------------------------------------------------------------------- chains
def _estimator(cfg: RunConfig, seed: int) -> StickyHDPHMM:
    return StickyHDPHMM(
        sampler=cfg.sampler, emission=cfg.emission, L=cfg.L, Lprime=cfg.Lprime,
        n_sweeps=cfg.sweeps, sticky=cfg.sticky, learn_hyper=cfg.learn_hyper,
        fixed_beta=cfg.fixed_beta, tied=cfg.tied, gamma=cfg.init_gamma,
        alpha_plus_kappa=cfg.init_alpha_plus_kappa, rho=cfg.init_rho, sigma=cfg.init_sigma,
        priors=HyperPriors(**cfg.priors), pseudocount=cfg.pseudocount, dof=cfg.dof,
        scale_factor=cfg.scale_factor, mean_cov_factor=cfg.mean_cov_factor,
        expected_cov_factor=cfg.expected_cov_factor, dirichlet=cfg.dirichlet, vocab=cfg.vocab,
        burn_in=cfg.sweeps, random_state=seed,
    )


def _run_chain(args):
    cfg, chain, feats, groups, truth_blocks, heldout = args
    seed = cfg.seed + chain
    out_dir = Path(cfg.output) / f"chain_{chain:03d}"
    out_dir.mkdir(parents=True, exist_ok=True)
    est = _estimator(cfg, seed)
    n_obs = feats.X.shape[0]
    with open(out_dir / "trace.jsonl", "w") as fh:

        def record(it, sampler, rec):
            rec = dict(rec)
            rec["loglik_per_obs"] = rec["loglik"] / n_obs
            z = est._frame_labels(sampler)
            if truth_blocks is not None:
                rec["hamming"] = hamming_matched(truth_blocks, z)
            if it % cfg.z_every == 0 or it == cfg.sweeps:
                rec["z"] = z.tolist()
            fh.write(json.dumps(rec) + "\n")

        start = time.time()
        try:
            est.fit(feats.X, groups=groups, callback=record)
        except (StickyHDPError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.error("chain %d failed: %s", chain, exc)
            return {"chain": chain, "seed": seed, "status": "failed", "error": str(exc)}
    (out_dir / "snapshot.json").write_text(est.sampler_.state().dumps())
    result = {"chain": chain, "seed": seed, "status": "ok",
              "seconds": round(time.time() - start, 3)}
    if heldout:
        result["heldout_loglik"] = [float(est.score(h)) for h in heldout]
    return result


def read_trace(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def decode_run(run_dir, burn_fraction=0.5, loglik_tolerance=0.1, ref_every=None):
    """Minimum expected Hamming decoding over all chains of a run.

    The test set holds each chain's final labels.  The reference set holds
    the labels stored after the burn-in fraction, every ``ref_every`` sweeps.
    Chains whose final per-observation log-likelihood falls more than
    ``loglik_tolerance`` below the best chain are left out of both sets.
    """
    run_dir = Path(run_dir)
    traces = {}
    for tdir in sorted(run_dir.glob("chain_*")):
        tr = read_trace(tdir / "trace.jsonl") if (tdir / "trace.jsonl").exists() else []
        if tr and "z" in tr[-1]:
            traces[tdir.name] = tr
    if not traces:
        raise ConfigError(f"{run_dir}: no completed chain traces")
    finals = {name: tr[-1]["loglik_per_obs"] for name, tr in traces.items()}
    best = max(finals.values())
    kept = [name for name in traces if finals[name] >= best - loglik_tolerance]
    test, refs = [], []
    for name in kept:
        tr = traces[name]
        last = tr[-1]["iter"]
        test.append(np.asarray(tr[-1]["z"]))
        for rec in tr:
            if "z" not in rec or rec["iter"] <= burn_fraction * last:
                continue
            if ref_every is None or rec["iter"] % ref_every == 0:
                refs.append(np.asarray(rec["z"]))
    if not refs:
        refs = list(test)
    idx, seq, scores = min_expected_hamming(test, refs)
    return {"chain": kept[idx], "labels": seq, "scores": scores.tolist(), "kept": kept,
            "n_reference": len(refs)}


def write_segments(run_dir, labels, feats: Features):
    segs = SegmentList.from_labels(labels)
    with open(Path(run_dir) / "segments.txt", "w") as fh:
        for s, e, lab in segs.segments:
            fh.write(f"{int(s)} {int(e)} {lab}\n")
    sidecar = [[int(b[0]), int(b[-1]) + 1] for b in feats.block_frames]
    (Path(run_dir) / "segments.times.json").write_text(
        json.dumps({"block_frames": sidecar, "n_frames": feats.n_frames})
    )


def _versions():
    import numba
    import scipy
    import sklearn

    return {"stickyhdp": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "numba": numba.__version__}


def run_experiment(cfg: RunConfig):
    """Run every chain, decode, score and write all artifacts under ``cfg.output``."""
    cfg.validate()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps())
    feats = ingest_features(cfg.features, cfg.feature_format, cfg.block_width, cfg.mask)
    X = feats.X
    if cfg.emission == "multinomial":
        X = X[:, 0].astype(np.int64) if X.ndim == 2 else X.astype(np.int64)
        feats.X = X
    groups = tie_min_duration(len(X), cfg.frames_per_state) if cfg.frames_per_state > 1 else None
    truth_frames = truth_blocks = None
    if cfg.truth:
        truth_frames = read_labels(cfg.truth)
        if truth_frames.size != feats.n_frames:
            raise FormatError(f"{cfg.truth}: {truth_frames.size} labels for "
                              f"{feats.n_frames} frames")
        truth_blocks = frames_to_blocks(truth_frames, feats)
    heldout = []
    for p in cfg.heldout:
        h = ingest_features(p, cfg.feature_format, cfg.block_width).X
        heldout.append(h[:, 0].astype(np.int64) if cfg.emission == "multinomial" else h)
    jobs = [(cfg, c, feats, groups, truth_blocks, heldout) for c in range(cfg.chains)]
    start = time.time()
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_chain, jobs))
    else:
        results = [_run_chain(j) for j in jobs]
    manifest = {"config": cfg.to_dict(), "seeds": [cfg.seed + c for c in range(cfg.chains)],
                "versions": _versions(), "chains": results,
                "seconds": round(time.time() - start, 3)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    ok = [r for r in results if r["status"] == "ok"]
    if not ok:
        raise StickyHDPError("every chain failed; see manifest.json")
    dec = decode_run(out, cfg.burn_fraction, cfg.loglik_tolerance, cfg.z_every)
    labels = dec["labels"]
    write_labels(out / "decoded_labels.txt", labels)
    write_segments(out, labels, feats)
    metrics = {"decoded_chain": dec["chain"], "expected_hamming": dec["scores"],
               "kept_chains": dec["kept"], "n_reference": dec["n_reference"],
               "failed_chains": [r["chain"] for r in results if r["status"] != "ok"]}
    if truth_blocks is not None:
        metrics["hamming"] = hamming_matched(truth_blocks, labels)
        frame_est = blocks_to_frames(labels, feats)
        metrics["der"] = frame_der(truth_frames, frame_est, feats.mask)
    if heldout:
        metrics["heldout_loglik"] = {r["chain"]: r["heldout_loglik"] for r in ok}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    return metrics


# -------------------------------------------------------------------- report
def quantile_table(values, qs=(0.1, 0.5, 0.9)):
    """Per-iteration quantiles across chains of an (n_chains, n_iter) array."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ConfigError("cannot summarise empty traces")
    return np.quantile(values, qs, axis=0).T


def emit_report(traces, metrics, out_dir, bins=20):
    """Write quantile curves of Hamming distance and log-likelihood plus histograms."""
    if not traces or not all(traces):
        raise ConfigError("cannot report on empty traces")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_iter = min(len(t) for t in traces)
    written = []
    for key in ("loglik", "hamming", "K"):
        if not all(key in t[0] for t in traces):
            continue
        vals = np.array([[rec[key] for rec in t[:n_iter]] for t in traces])
        table = quantile_table(vals)
        path = out / f"{key}_quantiles.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "q10", "q50", "q90"])
            for i, row in enumerate(table, start=1):
                w.writerow([i, *(f"{v:.10g}" for v in row)])
        written.append(path.name)
    burn = n_iter // 2
    hists = {"rho": np.concatenate([[rec["rho"] for rec in t[burn:n_iter]] for t in traces])}
    held = (metrics or {}).get("heldout_loglik")
    if held:
        hists["heldout_loglik"] = np.concatenate([np.ravel(v) for v in held.values()])
    for name, vals in hists.items():
        counts, edges = np.histogram(vals, bins=bins)
        path = out / f"{name}_hist.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lower", "upper", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([f"{lo:.10g}", f"{hi:.10g}", int(c)])
        written.append(path.name)
    return written


def report_run(run_dir):
    run_dir = Path(run_dir)
    traces = [read_trace(p / "trace.jsonl") for p in sorted(run_dir.glob("chain_*"))
              if (p / "trace.jsonl").exists()]
    metrics_path = run_dir / "metrics.json"
    metrics = json.loads(metrics_path.read_text()) if metrics_path.exists() else {}
    return emit_report(traces, metrics, run_dir / "report")
