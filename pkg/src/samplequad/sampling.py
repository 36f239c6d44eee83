"""Sample-set generation and file I/O.

Generators are backed by numpy's PCG64 bit generator with an explicit
integer seed, so a given (spec, seed, count) reproduces the same stream
on every platform.  Besides the standard box distributions this module
provides acceptance-rejection sampling on indicator regions and a
Metropolis-Hastings chain for the strongly correlated banana-shaped
density exp(-f(x)) * standard_normal_pdf(x), where f is the Rosenbrock
function with a = 1, b = 10.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AcceptanceTooLow,
    DimensionInconsistent,
    InvalidSpec,
    ParseError,
)
from .rule import SampleSet

UNIFORM = "uniform"
BETA = "beta"
NORMAL = "normal"
ROSENBROCK = "rosenbrock"
INDICATOR = "indicator"
FILE = "file"
KINDS = (UNIFORM, BETA, NORMAL, ROSENBROCK, INDICATOR, FILE)

# Metropolis-Hastings defaults, recorded in provenance
MH_STEP = 0.25
MH_BURN_IN = 10_000
MH_THINNING = 10

_MIN_ACCEPT_RATE = 1e-4
_ACCEPT_WINDOW = 1000

MAGIC = b"IQSAMPLE"


@dataclass
class DistributionSpec:
    """Declarative description of a sample source."""

    kind: str
    d: int
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown distribution kind {self.kind!r}")
        if self.d < 1:
            raise InvalidSpec("dimension must be >= 1")
        p = self.params
        if self.kind == BETA:
            a = np.broadcast_to(np.asarray(p.get("a", 2.0), float), self.d)
            b = np.broadcast_to(np.asarray(p.get("b", 2.0), float), self.d)
            if np.any(a <= 0) or np.any(b <= 0):
                raise InvalidSpec("beta shape parameters must be positive")
        if self.kind == NORMAL and np.any(
            np.broadcast_to(np.asarray(p.get("sd", 1.0), float), self.d) <= 0
        ):
            raise InvalidSpec("normal sd must be positive")
        if self.kind == ROSENBROCK and self.d < 2:
            raise InvalidSpec("the banana density needs d >= 2")
        if self.kind == INDICATOR:
            if "base" not in p or ("region" not in p and "predicate" not in p):
                raise InvalidSpec("indicator needs a base spec and a region")
        if self.kind == FILE and "path" not in p:
            raise InvalidSpec("file kind needs a path")

    def box(self, lo_default=0.0, hi_default=1.0):
        lo = np.broadcast_to(np.asarray(self.params.get("lo", lo_default), float), self.d)
        hi = np.broadcast_to(np.asarray(self.params.get("hi", hi_default), float), self.d)
        if np.any(lo >= hi):
            raise InvalidSpec("need lo < hi per coordinate")
        return lo, hi

    def to_json_dict(self) -> dict:
        params = {
            k: v for k, v in self.params.items() if not callable(v)
        }
        if self.kind == INDICATOR and isinstance(self.params.get("base"), DistributionSpec):
            params = dict(params)
            params["base"] = self.params["base"].to_json_dict()
        return {"kind": self.kind, "d": self.d, "seed": self.seed, "params": params}

    @classmethod
    def from_json_dict(cls, data: dict) -> "DistributionSpec":
        params = dict(data.get("params", {}))
        if data["kind"] == INDICATOR and isinstance(params.get("base"), dict):
            params["base"] = cls.from_json_dict(params["base"])
        return cls(
            kind=data["kind"],
            d=int(data["d"]),
            seed=int(data.get("seed", 0)),
            params=params,
        )


def _rosenbrock_exponent(x: np.ndarray, a: float, b: float) -> float:
    total = 0.0
    for i in range(x.shape[0] - 1):
        di = x[i + 1] - x[i] * x[i]
        total += b * di * di + (a - x[i]) * (a - x[i])
    return total


def rosenbrock_log_density(x: np.ndarray, a: float = 1.0, b: float = 10.0) -> float:
    """Log of the unnormalized target exp(-f(x)) * N(0, I) density."""
    x = np.asarray(x, dtype=float)
    return -_rosenbrock_exponent(x, a, b) - 0.5 * float(np.dot(x, x))


def _mh_rosenbrock(spec: DistributionSpec, count: int, trace=None):
    a = float(spec.params.get("a", 1.0))
    b = float(spec.params.get("b", 10.0))
    step = float(spec.params.get("step", MH_STEP))
    burn_in = int(spec.params.get("burn_in", MH_BURN_IN))
    thin = int(spec.params.get("thinning", MH_THINNING))
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    total = burn_in + count * thin
    steps = rng.normal(0.0, step, size=(total, spec.d))
    log_u = np.log(rng.random(total))
    x = np.zeros(spec.d)
    log_p = rosenbrock_log_density(x, a, b)
    out = np.empty((count, spec.d))
    filled = 0
    accepted_window = 0
    accepted_total = 0
    for t in range(total):
        prop = x + steps[t]
        log_q = rosenbrock_log_density(prop, a, b)
        accept = log_u[t] < log_q - log_p
        if trace is not None:
            trace.append((x.copy(), prop.copy(), log_q - log_p, log_u[t], bool(accept)))
        if accept:
            x = prop
            log_p = log_q
            accepted_window += 1
            accepted_total += 1
        if (t + 1) % _ACCEPT_WINDOW == 0:
            if accepted_window / _ACCEPT_WINDOW < _MIN_ACCEPT_RATE:
                raise AcceptanceTooLow(
                    f"MH acceptance below {_MIN_ACCEPT_RATE} in a window at step {t}"
                )
            accepted_window = 0
        if t >= burn_in and (t - burn_in) % thin == thin - 1:
            out[filled] = x
            filled += 1
            if filled == count:
                break
    provenance = {
        "kind": ROSENBROCK,
        "seed": spec.seed,
        "a": a,
        "b": b,
        "step": step,
        "burn_in": burn_in,
        "thinning": thin,
        "acceptance_rate": accepted_total / max(t + 1, 1),
    }
    return SampleSet(out[:filled], provenance=provenance)


def _indicator_predicate(spec: DistributionSpec):
    pred = spec.params.get("predicate")
    if callable(pred):
        return pred
    expr = spec.params["region"]
    code = compile(expr, "<region>", "eval")
    safe = {"__builtins__": {}}
    env = {"abs": abs, "min": min, "max": max, "np": np}
    env.update({name: getattr(math, name) for name in ("sqrt", "sin", "cos", "exp", "pi")})

    def predicate(x):
        local = dict(env)
        local["x"] = x
        return bool(eval(code, safe, local))

    return predicate


def _rejection_sample(spec: DistributionSpec, count: int):
    base = spec.params["base"]
    if isinstance(base, dict):
        base = DistributionSpec.from_json_dict(base)
    predicate = _indicator_predicate(spec)
    out = np.empty((count, spec.d))
    filled = 0
    proposed = 0
    accepted = 0
    batch_seed = spec.seed
    while filled < count:
        batch_spec = DistributionSpec(
            kind=base.kind, d=base.d, seed=batch_seed, params=base.params
        )
        block = generate(batch_spec, max(4 * (count - filled), 1024)).points
        batch_seed = batch_seed * 6364136223846793005 + 1442695040888963407
        batch_seed &= (1 << 63) - 1
        for row in block:
            proposed += 1
            if predicate(row):
                accepted += 1
                out[filled] = row
                filled += 1
                if filled == count:
                    break
        if proposed >= max(_ACCEPT_WINDOW * 100, 10 * count):
            if accepted / proposed < _MIN_ACCEPT_RATE:
                raise AcceptanceTooLow(
                    f"rejection acceptance {accepted / proposed:.2e} too low"
                )
    provenance = {
        "kind": INDICATOR,
        "seed": spec.seed,
        "base": base.to_json_dict(),
        "acceptance_rate": accepted / max(proposed, 1),
    }
    return SampleSet(out, provenance=provenance)


def generate(spec: DistributionSpec, count: int, trace=None) -> SampleSet:
    """Draw `count` points; deterministic for a fixed spec and seed."""
    if count < 1:
        raise InvalidSpec("count must be >= 1")
    if spec.kind == FILE:
        return read_samples(spec.params["path"], spec.params.get("format"))
    if spec.kind == ROSENBROCK:
        return _mh_rosenbrock(spec, count, trace=trace)
    if spec.kind == INDICATOR:
        return _rejection_sample(spec, count)
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    if spec.kind == UNIFORM:
        lo, hi = spec.box()
        pts = lo + (hi - lo) * rng.random((count, spec.d))
    elif spec.kind == NORMAL:
        mean = np.broadcast_to(np.asarray(spec.params.get("mean", 0.0), float), spec.d)
        sd = np.broadcast_to(np.asarray(spec.params.get("sd", 1.0), float), spec.d)
        pts = mean + sd * rng.standard_normal((count, spec.d))
    elif spec.kind == BETA:
        a = np.broadcast_to(np.asarray(spec.params.get("a", 2.0), float), spec.d)
        b = np.broadcast_to(np.asarray(spec.params.get("b", 2.0), float), spec.d)
        lo, hi = spec.box()
        pts = lo + (hi - lo) * rng.beta(a, b, size=(count, spec.d))
    else:  # pragma: no cover - guarded by __post_init__
        raise InvalidSpec(spec.kind)
    provenance = {"kind": spec.kind, "seed": spec.seed, "params": dict(spec.params)}
    return SampleSet(pts, provenance=provenance)


def write_samples(samples: SampleSet, path, fmt: str | None = None) -> None:
    """Write CSV (shortest round-trip decimals) or raw binary doubles."""
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "binary_f64")
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for row in samples.points:
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("\n")
        return
    if fmt != "binary_f64":
        raise InvalidSpec(f"unknown sample format {fmt!r}")
    pts = np.ascontiguousarray(samples.points, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", samples.d, samples.count))
        fh.write(pts.tobytes())


def read_samples(path, fmt: str | None = None) -> SampleSet:
    """Read a sample file; the inverse of `write_samples`."""
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "binary_f64")
    if fmt == "csv":
        rows = []
        d = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                fields = line.split(",")
                if d is None:
                    d = len(fields)
                elif len(fields) != d:
                    raise DimensionInconsistent(
                        f"row has {len(fields)} columns, expected {d}", line=lineno
                    )
                try:
                    rows.append([float(v) for v in fields])
                except ValueError as exc:
                    raise ParseError(f"bad number: {exc}", line=lineno) from exc
        if not rows:
            raise ParseError("empty sample file", line=0)
        return SampleSet(np.asarray(rows), provenance={"path": str(path)})
    if fmt != "binary_f64":
        raise InvalidSpec(f"unknown sample format {fmt!r}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise ParseError("missing sample-file magic header")
    d, count = struct.unpack("<II", blob[8:16])
    expected = 16 + 8 * d * count
    if len(blob) != expected:
        raise ParseError(f"file length {len(blob)} != expected {expected}")
    pts = np.frombuffer(blob, dtype="<f8", offset=16).reshape(count, d).copy()
    return SampleSet(pts, provenance={"path": str(path)})


def write_provenance(samples: SampleSet, path) -> None:
    """Deterministic JSON sidecar describing how a file was produced."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"provenance": samples.provenance, "count": samples.count,
                   "d": samples.d}, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")
