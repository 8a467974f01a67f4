"""File formats: counts, masks, predictions, config files and sample chains.

Counts file::

    V T
    t v count        # 1-based, one triplet per line, duplicates summed

Mask file: lines ``smooth t`` / ``forecast t``. Prediction table: ``v t true
pred task``. Reals are written with 17 significant digits.

Chain files are ``.npz`` containers holding a JSON manifest (format name,
version, field list with shapes/dtypes, hyperparameters, schedule) plus one
stacked array per state field.
"""
from __future__ import annotations

import json
import logging
import os
import zipfile
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from pgds.gibbs import SampleChain, Schedule
from pgds.model import ConfigError, CountMatrix, Hyperparams, ModelState
from pgds.evaluation import Mask

log = logging.getLogger(__name__)

CHAIN_FORMAT = "pgds-chain"
CHAIN_VERSION = 1


class ParseError(ValueError):
    """Malformed input file; the message carries the path and line number."""


class ChainFormatError(ValueError):
    """Unreadable, truncated or incompatible chain file."""


def fmt_real(x: float) -> str:
    return f"{x:.17g}"


# --------------------------------------------------------------------------
# Counts


@dataclass
class DatasetBundle:
    Y: CountMatrix
    feature_labels: list
    time_labels: list
    provenance: str = ""

    def __post_init__(self):
        if len(self.feature_labels) != self.Y.V:
            raise ConfigError(f"{len(self.feature_labels)} feature labels for V={self.Y.V}")
        if len(self.time_labels) != self.Y.T:
            raise ConfigError(f"{len(self.time_labels)} time labels for T={self.Y.T}")


def _int_fields(line: str, n: int, path, lineno: int) -> list:
    parts = line.split()
    if len(parts) != n:
        raise ParseError(f"{path}:{lineno}: expected {n} integers, got {line.strip()!r}")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise ParseError(f"{path}:{lineno}: not an integer in {line.strip()!r}") from None


def _content_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0]
            if line.strip():
                yield lineno, line


def _read_labels(path, n: int, what: str) -> list:
    with open(path) as fh:
        labels = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(labels) != n:
        raise ConfigError(f"{path}: {len(labels)} {what} labels, expected {n}")
    return labels


def load_counts(path, feature_labels=None, time_labels=None) -> DatasetBundle:
    lines = _content_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ParseError(f"{path}: missing 'V T' header") from None
    V, T = _int_fields(header, 2, path, lineno)
    if V < 1 or T < 1:
        raise ParseError(f"{path}:{lineno}: V and T must be positive")
    tv, vv, cc = [], [], []
    for lineno, line in lines:
        t, v, c = _int_fields(line, 3, path, lineno)
        if not (1 <= t <= T and 1 <= v <= V):
            raise ConfigError(f"{path}:{lineno}: index (t={t}, v={v}) outside 1..{T} x 1..{V}")
        if c < 1:
            raise ConfigError(f"{path}:{lineno}: count must be >= 1, got {c}")
        tv.append(t - 1)
        vv.append(v - 1)
        cc.append(c)
    if not cc:
        log.warning("%s: no counts; matrix is all zero", path)
    Y = CountMatrix.from_triplets(V, T, vv, tv, cc)
    if feature_labels is None and os.path.exists(f"{path}.features"):
        feature_labels = f"{path}.features"
    if time_labels is None and os.path.exists(f"{path}.times"):
        time_labels = f"{path}.times"
    flab = _read_labels(feature_labels, V, "feature") if feature_labels else [str(v + 1) for v in range(V)]
    tlab = _read_labels(time_labels, T, "time") if time_labels else [str(t + 1) for t in range(T)]
    return DatasetBundle(Y, flab, tlab, provenance=str(path))


def save_counts(Y: CountMatrix, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{Y.V} {Y.T}\n")
        for v, t, c in zip(Y.v, Y.t, Y.counts):
            fh.write(f"{t + 1} {v + 1} {c}\n")


# --------------------------------------------------------------------------
# Masks and prediction tables


def save_mask(mask: Mask, path) -> None:
    with open(path, "w") as fh:
        for t in mask.smoothing:
            fh.write(f"smooth {t}\n")
        for t in mask.forecast:
            fh.write(f"forecast {t}\n")


def load_mask(path, T: int) -> Mask:
    smooth, fc = [], []
    for lineno, line in _content_lines(path):
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("smooth", "forecast"):
            raise ParseError(f"{path}:{lineno}: expected 'smooth t' or 'forecast t'")
        try:
            t = int(parts[1])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: bad time step {parts[1]!r}") from None
        if not 1 <= t <= T:
            raise ConfigError(f"{path}:{lineno}: time step {t} outside 1..{T}")
        (smooth if parts[0] == "smooth" else fc).append(t)
    return Mask(T, tuple(smooth), tuple(fc))


def save_predictions(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("# v t true pred task\n")
        for v, t, y, yhat, task in rows:
            fh.write(f"{v} {t} {y} {fmt_real(yhat)} {task}\n")


def load_predictions(path) -> list:
    rows = []
    for lineno, line in _content_lines(path):
        parts = line.split()
        if len(parts) != 5 or parts[4] not in ("S", "F"):
            raise ParseError(f"{path}:{lineno}: expected 'v t true pred task' with task S or F")
        try:
            rows.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]), parts[4]))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: malformed number in {line.strip()!r}") from None
    return rows


# --------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    tau0: float = 1.0
    gamma0: float = 50.0
    eta0: float = 0.1
    eps0: float = 0.1
    K: int = 100
    stationary: bool = True
    steady_state: bool = False
    iterations: int = 6000
    burn_in: int = 4000
    thin: int = 100
    seed: int = 0
    data: Optional[str] = None
    mask: Optional[str] = None
    output: Optional[str] = None

    def hyper(self) -> Hyperparams:
        return Hyperparams(self.tau0, self.gamma0, self.eta0, self.eps0, self.K,
                           self.stationary, self.steady_state)

    def schedule(self) -> Schedule:
        return Schedule(self.iterations, self.burn_in, self.thin)

    def validate(self) -> "RunConfig":
        self.hyper()
        self.schedule()
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        return self


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name: str, raw: str, typ):
    try:
        if typ is bool:
            return _BOOL[raw.strip().lower()]
        return typ(raw.strip())
    except (KeyError, ValueError):
        raise ConfigError(f"config key {name!r}: cannot parse {raw.strip()!r}") from None


def _field_types() -> dict:
    out = {}
    for f in fields(RunConfig):
        typ = {"float": float, "int": int, "bool": bool}.get(str(f.type), str)
        out[f.name] = typ
    return out


def parse_config(path) -> dict:
    """Read ``key = value`` lines; unknown keys are errors."""
    types = _field_types()
    values = {}
    for lineno, line in _content_lines(path):
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw, types[key])
    return values


def build_config(path=None, **overrides) -> RunConfig:
    """Config file values overridden by any non-None keyword."""
    values = parse_config(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values).validate()


# --------------------------------------------------------------------------
# Sample chains


def save_chain(chain: SampleChain, path) -> None:
    if not chain.states:
        raise ChainFormatError("refusing to save an empty chain")
    arrays = {}
    field_specs = []
    for name in ModelState.ARRAY_FIELDS + ModelState.SCALAR_FIELDS:
        stacked = np.stack([np.asarray(getattr(s, name), dtype=np.float64) for s in chain.states])
        arrays[f"state/{name}"] = stacked
        field_specs.append({"name": f"state/{name}", "shape": list(stacked.shape), "dtype": "float64"})
    for key, val in chain.trace.items():
        arr = np.asarray(val, dtype=np.float64)
        arrays[f"trace/{key}"] = arr
        field_specs.append({"name": f"trace/{key}", "shape": list(arr.shape), "dtype": "float64"})
    manifest = {
        "format": CHAIN_FORMAT,
        "version": CHAIN_VERSION,
        "n_samples": len(chain.states),
        "hyper": asdict(chain.hyper),
        "schedule": asdict(chain.schedule),
        "seed": chain.seed,
        "smoothing": [int(s) for s in chain.smoothing],
        "fields": field_specs,
    }
    arrays["manifest"] = np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_chain(path) -> SampleChain:
    try:
        with np.load(path, allow_pickle=False) as npz:
            if "manifest" not in npz.files:
                raise ChainFormatError(f"{path}: no manifest; not a chain file")
            manifest = json.loads(npz["manifest"].tobytes().decode())
            if manifest.get("format") != CHAIN_FORMAT:
                raise ChainFormatError(f"{path}: format {manifest.get('format')!r} is not {CHAIN_FORMAT!r}")
            if manifest.get("version") != CHAIN_VERSION:
                raise ChainFormatError(
                    f"{path}: chain format version {manifest.get('version')} unsupported (expected {CHAIN_VERSION})"
                )
            data = {}
            for spec in manifest["fields"]:
                if spec["name"] not in npz.files:
                    raise ChainFormatError(f"{path}: missing field {spec['name']}")
                arr = npz[spec["name"]]
                if list(arr.shape) != spec["shape"] or str(arr.dtype) != spec["dtype"]:
                    raise ChainFormatError(f"{path}: field {spec['name']} does not match manifest")
                data[spec["name"]] = arr
    except (zipfile.BadZipFile, EOFError, OSError, ValueError, KeyError) as err:
        if isinstance(err, ChainFormatError):
            raise
        raise ChainFormatError(f"{path}: unreadable chain file ({err})") from err
    n = manifest["n_samples"]
    states = []
    for i in range(n):
        kw = {name: data[f"state/{name}"][i].copy() for name in ModelState.ARRAY_FIELDS}
        kw.update({name: float(data[f"state/{name}"][i]) for name in ModelState.SCALAR_FIELDS})
        states.append(ModelState(**kw))
    trace = {k.split("/", 1)[1]: v for k, v in data.items() if k.startswith("trace/")}
    return SampleChain(
        states=states,
        hyper=Hyperparams(**manifest["hyper"]),
        schedule=Schedule(**manifest["schedule"]),
        seed=manifest["seed"],
        smoothing=tuple(manifest["smoothing"]),
        trace=trace,
    )


# --------------------------------------------------------------------------
# Tables: evaluation and per-component report


def format_eval_table(reports: dict, burstiness: Optional[float] = None) -> str:
    """Tab-separated task x metric x model table; ``reports`` maps model name to PredictionReport."""
    names = list(reports)
    lines = ["\t".join(["task", "metric"] + names)]
    for task in ("S", "F"):
        for metric in ("mre", "mae"):
            cells = [fmt_real(r.tasks[task][metric]) if task in r.tasks else "-" for r in reports.values()]
            if any(c != "-" for c in cells):
                lines.append("\t".join([task, metric.upper()] + cells))
    if burstiness is not None:
        lines.append(f"# burstiness\t{fmt_real(burstiness)}")
    return "\n".join(lines) + "\n"


def posterior_means(chain: SampleChain) -> dict:
    keys = ("Phi", "Theta", "Pi", "nu", "delta")
    return {k: np.mean([getattr(s, k) for s in chain.states], axis=0) for k in keys}


def write_report(chain: SampleChain, bundle: Optional[DatasetBundle], outdir,
                 top_components: int = 10, top_features: int = 16) -> list:
    """Write plot-ready TSV tables from posterior means; returns the written paths.

    - ``weights.tsv``: components sorted by nu, descending
    - ``features.tsv``: for each top component, the features with the largest phi
    - ``theta.tsv``: time-step factors of the top components (delta-scaled, i.e. expected counts)
    - ``transitions.tsv``: the Pi submatrix restricted to the top components
    """
    pm = posterior_means(chain)
    V, K = pm["Phi"].shape
    T = pm["Theta"].shape[0]
    flab = bundle.feature_labels if bundle is not None else [str(v + 1) for v in range(V)]
    tlab = bundle.time_labels[:T] if bundle is not None else [str(t + 1) for t in range(T)]
    if len(flab) != V:
        raise ConfigError(f"{len(flab)} feature labels for a chain with V={V}")
    order = np.argsort(-pm["nu"], kind="stable")
    top = order[: min(top_components, K)]
    os.makedirs(outdir, exist_ok=True)
    paths = []

    def emit(name, header, rows):
        path = os.path.join(outdir, name)
        with open(path, "w") as fh:
            fh.write("\t".join(header) + "\n")
            for row in rows:
                fh.write("\t".join(str(c) for c in row) + "\n")
        paths.append(path)

    emit("weights.tsv", ["rank", "component", "nu"],
         [(r + 1, k + 1, fmt_real(pm["nu"][k])) for r, k in enumerate(order)])
    rows = []
    for r, k in enumerate(top):
        feats = np.argsort(-pm["Phi"][:, k], kind="stable")[: min(top_features, V)]
        rows.extend((r + 1, k + 1, j + 1, flab[v], fmt_real(pm["Phi"][v, k])) for j, v in enumerate(feats))
    emit("features.tsv", ["component_rank", "component", "feature_rank", "feature", "phi"], rows)
    scaled = pm["Theta"] * pm["delta"][:, None]
    emit("theta.tsv", ["t", "time"] + [f"c{k + 1}" for k in top],
         [[t + 1, tlab[t]] + [fmt_real(scaled[t, k]) for k in top] for t in range(T)])
    emit("transitions.tsv", ["to\\from"] + [f"c{k + 1}" for k in top],
         [[f"c{k1 + 1}"] + [fmt_real(pm["Pi"][k1, k2]) for k2 in top] for k1 in top])
    return paths
