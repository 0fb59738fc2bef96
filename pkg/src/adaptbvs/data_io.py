"""Synthetic data, CSV ingestion, configuration files and result writers.

Floats are written with Python's shortest round-trip ``repr`` so every
file reloads to the identical double.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .model import Dataset, ModelError
from .rng import DATA_STREAM, CounterRNG

BETA_TEMPLATE = (2.0, -3.0, 2.0, 2.0, -3.0, 3.0, -2.0, 3.0, -2.0, 3.0)


class DataFormatError(ValueError):
    """A malformed input file; the message names the line and column."""


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    n: int
    p: int
    rho: float = 0.0
    snr: float = 1.0
    sigma2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need n >= 2, got {self.n}")
        if self.p < len(BETA_TEMPLATE):
            raise ValueError(f"need p >= {len(BETA_TEMPLATE)} for the coefficient template, "
                             f"got p={self.p}")
        if not 0 <= self.rho < 1:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if not self.snr > 0:
            raise ValueError(f"snr must be positive, got {self.snr}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass(frozen=True)
class Truth:
    beta: np.ndarray
    active: tuple          # 0-based indices of the nonzero coefficients
    spec: SynthSpec

    def to_dict(self):
        return {"beta": [float(b) for b in self.beta],
                "active": [int(j) + 1 for j in self.active],
                "spec": asdict(self.spec)}


def true_beta(spec):
    scale = spec.snr * math.sqrt(spec.sigma2 * math.log(spec.p) / spec.n)
    beta = np.zeros(spec.p)
    beta[:len(BETA_TEMPLATE)] = scale * np.asarray(BETA_TEMPLATE)
    return beta


def generate_synthetic(spec):
    """Draw ``(Dataset, Truth)``.

    Rows of X follow the AR(1) recursion x_1 = z_1,
    x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j, so corr(x_j, x_k) = rho^|j-k|.
    All normals come from the data stream of the counter generator: first
    the n*p innovations in row-major order, then the n noise terms.
    """
    rng = CounterRNG(spec.seed, DATA_STREAM)
    z = rng.normal((spec.n, spec.p))
    x = np.empty_like(z)
    x[:, 0] = z[:, 0]
    c = math.sqrt(1.0 - spec.rho ** 2)
    for j in range(1, spec.p):
        x[:, j] = spec.rho * x[:, j - 1] + c * z[:, j]
    beta = true_beta(spec)
    e = math.sqrt(spec.sigma2) * rng.normal(spec.n)
    y = x @ beta + e
    active = tuple(int(j) for j in np.flatnonzero(beta))
    return Dataset(y, x), Truth(beta, active, spec)


# ---------------------------------------------------------------------------
# CSV


def fmt(x):
    """Shortest decimal that round-trips to the same double."""
    return repr(float(x))


def write_dataset_csv(path, dataset, response="y"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([response, *dataset.names])
        for i in range(dataset.n):
            w.writerow([fmt(dataset.y[i]), *(fmt(v) for v in dataset.x[i])])


def load_csv(path, response="y", standardize=False):
    """Read a header-first CSV: one response column, every other column a covariate."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if response not in header:
            raise DataFormatError(
                f"{path}: line 1: no response column named {response!r} in the header")
        r_idx = header.index(response)
        width = len(header)
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DataFormatError(
                    f"{path}: line {line}: header declares {width} columns "
                    f"({width - 1} covariates) but the row has {len(row)}")
            vals = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: line {line}, column {col + 1} ({header[col]}): "
                        f"cannot parse {cell!r} as a number") from None
                if not math.isfinite(v):
                    raise DataFormatError(
                        f"{path}: line {line}, column {col + 1} ({header[col]}): "
                        f"non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if len(rows) < 2:
        raise DataFormatError(f"{path}: need at least two data rows, found {len(rows)}")
    a = np.asarray(rows)
    y = a[:, r_idx]
    keep = [c for c in range(width) if c != r_idx]
    if not keep:
        raise DataFormatError(f"{path}: no covariate columns")
    x = a[:, keep]
    names = tuple(header[c] for c in keep)
    if standardize:
        x = standardize_columns(x, names)
    try:
        return Dataset(y, x, names)
    except ModelError as err:
        raise DataFormatError(f"{path}: {err}") from None


def standardize_columns(x, names=None):
    """Centre each column and scale it to unit (population) variance."""
    sd = x.std(axis=0)
    bad = np.flatnonzero(sd == 0)
    if bad.size:
        label = names[bad[0]] if names else f"column {bad[0] + 1}"
        raise DataFormatError(f"cannot standardize constant covariate {label}")
    return (x - x.mean(axis=0)) / sd


def write_truth(path, truth):
    with open(path, "w") as fh:
        json.dump(truth.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# results


def write_pips(path, names, pip_emp, pip_rb=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable_index", "variable_name", "pip_empirical", "pip_rb"])
        for j, name in enumerate(names):
            emp = "" if pip_emp is None else fmt(pip_emp[j])
            rb = "" if pip_rb is None else fmt(pip_rb[j])
            w.writerow([j + 1, name, emp, rb])


def read_pips(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    emp = np.array([float(r["pip_empirical"]) if r["pip_empirical"] else np.nan for r in rows])
    rb = np.array([float(r["pip_rb"]) if r["pip_rb"] else np.nan for r in rows])
    return [r["variable_name"] for r in rows], emp, rb


def write_trace(path, output):
    """One row per post-burn-in iteration and chain; indices are 1-based."""
    burn = int(output.meta.get("config", {}).get("burn_in", 0))
    T, L = output.accept_series.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "chain", "accepted", "acceptance_prob", "model_size",
                    "n_flips", "log_posterior"])
        for t in range(T):
            for c in range(L):
                w.writerow([burn + t + 1, c + 1, int(output.accepted[t, c]),
                            fmt(output.accept_series[t, c]), int(output.model_size[t, c]),
                            int(output.n_flips[t, c]), fmt(output.log_post[t, c])])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def summary_record(summary, config, seed, extra=None):
    rec = {"summary": summary, "config": config, "seed": int(seed), "version": __version__}
    if extra:
        rec.update(extra)
    return _jsonable(rec)


def write_summary(path, summary, config, seed, extra=None):
    rec = summary_record(summary, config, seed, extra)
    with open(path, "w") as fh:
        json.dump(rec, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return rec


def strip_timings(rec):
    """A summary record without wall-clock fields, for reproducibility checks."""
    if isinstance(rec, dict):
        return {k: strip_timings(v) for k, v in rec.items()
                if k not in ("timings", "time_budget")}
    if isinstance(rec, list):
        return [strip_timings(v) for v in rec]
    return rec


# ---------------------------------------------------------------------------
# configuration files


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment.  Keys use flag names."""
    out = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}: line {line_no}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise DataFormatError(f"{path}: line {line_no}: empty key")
            out[key.lstrip("-").replace("-", "_")] = value
    return out
