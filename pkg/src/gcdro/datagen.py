"""Synthetic sub-population-shift benchmark and tabular CSV ingestion.

The simulation draws covariates X = [S, U, V] in R^10: five stable
coordinates S that drive the target, four irrelevant coordinates U, and one
spurious coordinate V whose coupling to the target is controlled by a
per-sub-population factor r.  The target is

    y = theta_s . S + 0.1 * S1*S2*S3 + Normal(0, target_noise_std^2)

and V ~ Laplace(sign(r) * y, scale(r)).  Larger |r| means a tighter Laplace
around +-y, i.e. a stronger spurious V-y correlation; sign(r) sets its sign.

Label noise replaces a fixed fraction of targets with draws from
Normal(0, Std(y)^2), flagging the affected rows.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

PRNG_ALGORITHM = "PCG64"

_DEFAULT_THETA_S = tuple(np.full(5, 1.0 / math.sqrt(5.0)))


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Immutable design matrix plus target, group ids and noise flags."""

    X: np.ndarray
    y: np.ndarray
    group_id: np.ndarray
    noise_flag: np.ndarray

    def __post_init__(self):
        X = _frozen(np.asarray(self.X, dtype=np.float64))
        y = _frozen(np.asarray(self.y, dtype=np.float64))
        gid = _frozen(np.asarray(self.group_id, dtype=np.int64))
        flag = _frozen(np.asarray(self.noise_flag, dtype=bool))
        if X.ndim != 2 or y.ndim != 1 or gid.ndim != 1 or flag.ndim != 1:
            raise ValueError("Dataset arrays have wrong dimensionality")
        n = X.shape[0]
        if not (y.shape[0] == gid.shape[0] == flag.shape[0] == n):
            raise ValueError("Dataset row counts disagree")
        if not np.isfinite(X).all() or not np.isfinite(y).all():
            raise ValueError("Dataset contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "group_id", gid)
        object.__setattr__(self, "noise_flag", flag)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SimConfig:
    """Configuration of the synthetic benchmark.

    ``laplace_scale_mode`` selects how the spurious-coordinate scale is read
    from r: ``"inverse"`` (default) uses 1/(5 ln|r|) so that larger |r|
    tightens the Laplace and strengthens the spurious correlation;
    ``"direct"`` uses ln|r|/5.
    """

    n_major: int = 9500
    n_minor: int = 500
    r_major: float = 1.9
    r_minor: float = -1.3
    test_rs: tuple = (3.0, 2.3, -1.9, -2.7)
    noise_level: float = 0.05
    theta_s: tuple = _DEFAULT_THETA_S
    label_noise_std_mode: bool = True
    seed: int = 0
    target_noise_std: float = 0.5
    laplace_scale_mode: str = "inverse"
    test_size: int = 1000

    def __post_init__(self):
        if self.n_major < 1 or self.n_minor < 1:
            raise ConfigError("n_major and n_minor must be >= 1")
        for r in (self.r_major, self.r_minor, *self.test_rs):
            if abs(r) <= 1.0:
                raise ConfigError(f"|r| must exceed 1 (got r={r})")
        if not 0.0 <= self.noise_level < 0.5:
            raise ConfigError("noise_level must lie in [0, 0.5)")
        if len(self.theta_s) != 5:
            raise ConfigError("theta_s must have 5 entries")
        if self.laplace_scale_mode not in ("inverse", "direct"):
            raise ConfigError(f"unknown laplace_scale_mode {self.laplace_scale_mode!r}")
        if self.target_noise_std < 0:
            raise ConfigError("target_noise_std must be >= 0")
        if self.test_size < 1:
            raise ConfigError("test_size must be >= 1")
        object.__setattr__(self, "test_rs", tuple(float(r) for r in self.test_rs))
        object.__setattr__(self, "theta_s", tuple(float(t) for t in self.theta_s))

    @property
    def theta_star(self) -> np.ndarray:
        """True coefficient vector in the full 10-dim covariate space."""
        return np.concatenate([np.asarray(self.theta_s), np.zeros(5)])


def laplace_scale(r: float, mode: str = "inverse") -> float:
    """Scale of the spurious coordinate's Laplace noise for factor ``r``."""
    if abs(r) <= 1.0:
        raise ConfigError(f"|r| must exceed 1 (got r={r})")
    if mode == "inverse":
        return 1.0 / (5.0 * math.log(abs(r)))
    if mode == "direct":
        return math.log(abs(r)) / 5.0
    raise ConfigError(f"unknown laplace_scale_mode {mode!r}")


def gen_subpopulation(
    r: float,
    n: int,
    theta_s,
    rng: np.random.Generator,
    *,
    group: int = 0,
    target_noise_std: float = 0.5,
    laplace_scale_mode: str = "inverse",
) -> Dataset:
    """Draw one sub-population with spurious-correlation factor ``r``.

    Columns are ordered [S (5), U (4), V (1)].  All rows get group id
    ``group`` and a clear noise flag.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    theta_s = np.asarray(theta_s, dtype=np.float64)
    if theta_s.shape != (5,):
        raise ConfigError("theta_s must have 5 entries")
    scale = laplace_scale(r, laplace_scale_mode)

    su = rng.normal(0.0, math.sqrt(2.0), size=(n, 9))
    s = su[:, :5]
    y = s @ theta_s + 0.1 * s[:, 0] * s[:, 1] * s[:, 2]
    if target_noise_std > 0:
        y = y + rng.normal(0.0, target_noise_std, size=n)
    v = rng.laplace(math.copysign(1.0, r) * y, scale)
    X = np.column_stack([su, v])
    return Dataset(
        X=X,
        y=y,
        group_id=np.full(n, group, dtype=np.int64),
        noise_flag=np.zeros(n, dtype=bool),
    )


def inject_label_noise(ds: Dataset, eps: float, rng: np.random.Generator) -> Dataset:
    """Replace round(eps*n) targets with Normal(0, Std(y)^2) draws.

    Indices are chosen uniformly without replacement; the pre-noise sample
    standard deviation (population convention) sets the replacement scale.
    Affected rows get noise_flag = True; everything else is untouched.
    """
    if not 0.0 <= eps < 1.0:
        raise ConfigError("eps must lie in [0, 1)")
    m = int(round(eps * ds.n))
    if m == 0:
        return ds
    idx = rng.choice(ds.n, size=m, replace=False)
    std = float(np.std(ds.y))
    y = ds.y.copy()
    y[idx] = rng.normal(0.0, std, size=m)
    flag = ds.noise_flag.copy()
    flag[idx] = True
    return Dataset(X=ds.X, y=y, group_id=ds.group_id, noise_flag=flag)


@dataclass(frozen=True)
class Benchmark:
    """A train split, one test split per r, and provenance metadata."""

    train: Dataset
    tests: dict
    meta: dict = field(default_factory=dict)


def make_benchmark(cfg: SimConfig, rng: np.random.Generator | None = None) -> Benchmark:
    """Generate the full benchmark: contaminated train set plus clean tests.

    The train split concatenates the major (group 0) and minor (group 1)
    sub-populations and then injects label noise.  Test sets are drawn from
    independent child streams (stream id = position) of the root generator,
    so they could be produced concurrently without changing the output.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    streams = rng.spawn(2 + len(cfg.test_rs))
    gen_kw = dict(
        target_noise_std=cfg.target_noise_std,
        laplace_scale_mode=cfg.laplace_scale_mode,
    )
    major = gen_subpopulation(cfg.r_major, cfg.n_major, cfg.theta_s, streams[0], group=0, **gen_kw)
    minor = gen_subpopulation(cfg.r_minor, cfg.n_minor, cfg.theta_s, streams[0], group=1, **gen_kw)
    train = Dataset(
        X=np.vstack([major.X, minor.X]),
        y=np.concatenate([major.y, minor.y]),
        group_id=np.concatenate([major.group_id, minor.group_id]),
        noise_flag=np.concatenate([major.noise_flag, minor.noise_flag]),
    )
    train = inject_label_noise(train, cfg.noise_level, streams[1])
    tests = {
        r: gen_subpopulation(r, cfg.test_size, cfg.theta_s, streams[2 + i], group=0, **gen_kw)
        for i, r in enumerate(cfg.test_rs)
    }
    meta = {
        "prng": PRNG_ALGORITHM,
        "seed": cfg.seed,
        "theta_s": list(cfg.theta_s),
        "theta_star": cfg.theta_star.tolist(),
        "noise_level": cfg.noise_level,
        "n_noisy": int(train.noise_flag.sum()),
        "r_major": cfg.r_major,
        "r_minor": cfg.r_minor,
        "test_rs": list(cfg.test_rs),
        "target_noise_std": cfg.target_noise_std,
        "laplace_scale_mode": cfg.laplace_scale_mode,
    }
    return Benchmark(train=train, tests=tests, meta=meta)


@dataclass(frozen=True)
class RealDatasetSpec:
    """How to turn a CSV file into a :class:`Dataset`.

    ``group_rule`` is either a column name whose integer values become group
    ids directly, a ``(column, bin_edges)`` pair binned with strictly
    increasing edges, or None (single group 0).  When ``standardize`` is set,
    features are z-scored with statistics taken from the rows whose group id
    is in ``train_groups`` (all rows when None).
    """

    csv_path: str
    target_column: str
    feature_columns: tuple
    group_rule: object = None
    standardize: bool = False
    train_groups: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if self.target_column in self.feature_columns:
            raise ConfigError("target and feature columns must be disjoint")
        if isinstance(self.group_rule, (tuple, list)):
            col, edges = self.group_rule
            edges = tuple(float(e) for e in edges)
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ConfigError("bin edges must be strictly increasing")
            object.__setattr__(self, "group_rule", (str(col), edges))
        if self.train_groups is not None:
            object.__setattr__(self, "train_groups", tuple(int(g) for g in self.train_groups))


def _parse_cell(raw: str, column: str, row: int) -> float:
    if raw is None or raw.strip() == "":
        raise DataError(f"missing value in column {column!r} at data row {row}")
    try:
        return float(raw)
    except ValueError:
        raise DataError(f"cannot parse {raw!r} in column {column!r} at data row {row}") from None


def load_csv(spec: RealDatasetSpec) -> Dataset:
    """Load a tabular regression dataset according to ``spec``."""
    path = Path(spec.csv_path)
    if not path.exists():
        raise DataError(f"no such file: {path}")

    group_col = None
    if isinstance(spec.group_rule, str):
        group_col = spec.group_rule
    elif isinstance(spec.group_rule, tuple):
        group_col = spec.group_rule[0]

    needed = list(spec.feature_columns) + [spec.target_column]
    if group_col is not None:
        needed.append(group_col)

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: missing header row")
        missing = [c for c in needed if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        feats, targets, group_raw = [], [], []
        for i, row in enumerate(reader):
            feats.append([_parse_cell(row[c], c, i) for c in spec.feature_columns])
            targets.append(_parse_cell(row[spec.target_column], spec.target_column, i))
            if group_col is not None:
                group_raw.append(_parse_cell(row[group_col], group_col, i))

    if not targets:
        raise DataError(f"{path}: no data rows selected")
    X = np.asarray(feats, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)

    if group_col is None:
        gid = np.zeros(len(y), dtype=np.int64)
    elif isinstance(spec.group_rule, str):
        gvals = np.asarray(group_raw)
        gid = gvals.astype(np.int64)
        if not np.all(gid == gvals):
            raise DataError(f"group column {group_col!r} holds non-integer values")
    else:
        edges = np.asarray(spec.group_rule[1])
        gid = np.digitize(np.asarray(group_raw), edges).astype(np.int64)

    if spec.standardize:
        mask = (
            np.ones(len(y), dtype=bool)
            if spec.train_groups is None
            else np.isin(gid, spec.train_groups)
        )
        if not mask.any():
            raise DataError("standardization subset is empty")
        mu = X[mask].mean(axis=0)
        sd = X[mask].std(axis=0)
        sd[sd == 0] = 1.0
        X = (X - mu) / sd

    return Dataset(X=X, y=y, group_id=gid, noise_flag=np.zeros(len(y), dtype=bool))


def write_dataset_csv(ds: Dataset, path) -> None:
    """Write one split as CSV: feature_0..feature_{d-1}, y, group_id, noise_flag."""
    path = Path(path)
    header = [f"feature_{j}" for j in range(ds.dim)] + ["y", "group_id", "noise_flag"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            writer.writerow(
                [repr(float(v)) for v in ds.X[i]]
                + [repr(float(ds.y[i])), int(ds.group_id[i]), int(ds.noise_flag[i])]
            )


def export_benchmark(bench: Benchmark, out_dir) -> list:
    """Write train/test CSVs plus metadata JSON; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "train.csv"
    write_dataset_csv(bench.train, p)
    written.append(p)
    for r, ds in bench.tests.items():
        p = out / f"test_r{r}.csv"
        write_dataset_csv(ds, p)
        written.append(p)
    meta_path = out / "metadata.json"
    meta_path.write_text(json.dumps(bench.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(meta_path)
    return written


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    """Copy of ``cfg`` with a different seed."""
    return replace(cfg, seed=int(seed))
