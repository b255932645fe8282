"""Paired function datasets: generation, subsampling and file I/O.

File format
-----------
Line 1 is a JSON header with keys ``version``, ``dx``, ``sizes``,
``in_channels``, ``n`` and ``domain_map`` (plus an optional ``meta`` object).
Each function then contributes two lines of comma-separated decimal floats:
its input values (row-major over the grid, channel fastest) and its target
values.  Floats are written with ``repr`` so round trips are bit-exact.

A file whose name ends in ``.bin`` uses the same header line followed by the
same records as little-endian float64.

``domain_map = {"lo": a, "hi": b, "x0": x0}`` states that the data lives on
the periodic interval ``[a, b)`` (per dimension) with first grid point ``x0``;
it is mapped affinely onto ``[-pi, pi)``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .finite_no_sim import eval_fno_many, sample_fno_params
from .layer_cov import fno_architecture
from .torus_spectral import TWO_PI, GridFunction, TorusGrid

FORMAT_VERSION = 1
HEADER_KEYS = ("version", "dx", "sizes", "in_channels", "n", "domain_map")


class DatasetError(ValueError):
    """Base class of dataset parse errors."""


class MalformedHeader(DatasetError):
    pass


class LengthMismatch(DatasetError):
    pass


class NonFinite(DatasetError):
    pass


@dataclass(frozen=True)
class DomainMap:
    """Affine map from the periodic box ``[lo, hi)^d`` onto ``[-pi, pi)^d``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    x0: tuple[float, ...]

    @classmethod
    def identity(cls, grid: TorusGrid) -> "DomainMap":
        d = grid.dim
        return cls((-math.pi,) * d, (math.pi,) * d, tuple(grid.origin))

    def to_torus(self, x) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return -np.pi + TWO_PI * (np.asarray(x, dtype=float) - lo) / (hi - lo)

    def from_torus(self, t) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return lo + (np.asarray(t, dtype=float) + np.pi) * (hi - lo) / TWO_PI

    def grid(self, sizes) -> TorusGrid:
        return TorusGrid(tuple(sizes), tuple(np.atleast_1d(self.to_torus(self.x0)).tolist()))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "x0": list(self.x0)}

    @classmethod
    def from_dict(cls, data: dict, dim: int) -> "DomainMap":
        def vec(key):
            out = tuple(float(v) for v in np.atleast_1d(data[key]))
            if len(out) == 1:
                out = out * dim
            if len(out) != dim:
                raise MalformedHeader(f"domain_map.{key} has {len(out)} entries for dx={dim}")
            return out

        lo, hi, x0 = vec("lo"), vec("hi"), vec("x0")
        if any(not h > l for l, h in zip(lo, hi)):
            raise MalformedHeader("domain_map needs hi > lo")
        return cls(lo, hi, x0)


@dataclass(frozen=True, eq=False)
class FunctionDataset:
    """``n`` input/target function pairs sampled on a shared torus grid.

    ``inputs`` has shape ``(n, M, J0)`` and ``targets`` shape ``(n, M)``, with
    grid points in row-major order.
    """

    grid: TorusGrid
    inputs: np.ndarray
    targets: np.ndarray
    ids: tuple[str, ...] = ()
    domain_map: DomainMap | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        m = self.grid.n_points
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3 or x.shape[1] != m:
            raise ValueError(f"inputs of shape {x.shape} do not match {m} grid points")
        if y.shape != x.shape[:2]:
            raise ValueError(f"targets of shape {y.shape} do not match inputs {x.shape[:2]}")
        if x.shape[0] < 1:
            raise ValueError("a dataset needs at least one function pair")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NonFinite("dataset contains non-finite values")
        ids = tuple(str(i) for i in self.ids) or tuple(str(i) for i in range(x.shape[0]))
        if len(ids) != x.shape[0]:
            raise ValueError("need one id per function pair")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "ids", ids)
        if self.domain_map is None:
            object.__setattr__(self, "domain_map", DomainMap.identity(self.grid))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def in_channels(self) -> int:
        return self.inputs.shape[2]

    def input_function(self, i: int) -> GridFunction:
        return GridFunction(self.grid, self.inputs[i].reshape(*self.grid.sizes, self.in_channels))

    def target_function(self, i: int) -> GridFunction:
        return GridFunction(self.grid, self.targets[i].reshape(self.grid.sizes))

    def input_functions(self) -> list[GridFunction]:
        return [self.input_function(i) for i in range(self.n)]

    def select(self, indices) -> "FunctionDataset":
        idx = np.asarray(indices, dtype=int)
        return FunctionDataset(self.grid, self.inputs[idx], self.targets[idx],
                               tuple(self.ids[i] for i in idx), self.domain_map, dict(self.meta))

    def source_points(self) -> np.ndarray:
        """Grid nodes in the original (unmapped) coordinates, shape ``(M, d)``."""
        return self.domain_map.from_torus(self.grid.points())

    def sha256(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"sizes": self.grid.sizes, "origin": self.grid.origin}).encode())
        h.update(np.ascontiguousarray(self.inputs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.targets, dtype="<f8").tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# serialization


def _header(ds: FunctionDataset) -> dict:
    head = {
        "version": FORMAT_VERSION,
        "dx": ds.grid.dim,
        "sizes": list(ds.grid.sizes),
        "in_channels": ds.in_channels,
        "n": ds.n,
        "domain_map": ds.domain_map.to_dict(),
    }
    meta = dict(ds.meta)
    if ds.ids != tuple(str(i) for i in range(ds.n)):
        meta["ids"] = list(ds.ids)
    if meta:
        head["meta"] = meta
    return head


def _format_row(values: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_dataset(ds: FunctionDataset, path) -> None:
    """Write ``ds``; a ``.bin`` suffix selects the binary variant."""
    path = Path(path)
    header = json.dumps(_header(ds)) + "\n"
    if path.suffix == ".bin":
        records = np.concatenate(
            [np.concatenate([ds.inputs[i].ravel(), ds.targets[i]]) for i in range(ds.n)])
        with open(path, "wb") as fh:
            fh.write(header.encode())
            fh.write(records.astype("<f8").tobytes())
        return
    with open(path, "w") as fh:
        fh.write(header)
        for i in range(ds.n):
            fh.write(_format_row(ds.inputs[i].ravel()) + "\n")
            fh.write(_format_row(ds.targets[i]) + "\n")


def _parse_header(line: str) -> dict:
    try:
        head = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"header is not valid JSON: {exc}") from None
    if not isinstance(head, dict):
        raise MalformedHeader("header must be a JSON object")
    missing = [k for k in HEADER_KEYS if k not in head]
    if missing:
        raise MalformedHeader(f"header is missing keys {missing}")
    if head["version"] != FORMAT_VERSION:
        raise MalformedHeader(f"unsupported format version {head['version']!r}")
    try:
        dx = int(head["dx"])
        sizes = [int(m) for m in head["sizes"]]
        ok = dx >= 1 and len(sizes) == dx and all(m >= 1 for m in sizes) \
            and int(head["in_channels"]) >= 1 and int(head["n"]) >= 1
    except (TypeError, ValueError):
        ok = False
    if not ok:
        raise MalformedHeader("header fields dx/sizes/in_channels/n are inconsistent")
    if not isinstance(head["domain_map"], dict):
        raise MalformedHeader("domain_map must be an object")
    try:
        DomainMap.from_dict(head["domain_map"], dx)
    except KeyError as exc:
        raise MalformedHeader(f"domain_map is missing {exc}") from None
    return head


def _dataset_from(head: dict, rows: list[np.ndarray]) -> FunctionDataset:
    dx, n, j0 = int(head["dx"]), int(head["n"]), int(head["in_channels"])
    dmap = DomainMap.from_dict(head["domain_map"], dx)
    grid = dmap.grid(head["sizes"])
    m = grid.n_points
    meta = dict(head.get("meta", {}))
    ids = tuple(meta.pop("ids", ()))
    x = np.stack(rows[0::2]).reshape(n, m, j0)
    y = np.stack(rows[1::2])
    return FunctionDataset(grid, x, y, ids, dmap, meta)


def _check_row(row: np.ndarray, expected: int, index: int, kind: str) -> None:
    if row.size != expected:
        raise LengthMismatch(f"record {index} ({kind}) has {row.size} values, expected {expected}")
    if not np.all(np.isfinite(row)):
        raise NonFinite(f"record {index} ({kind}) contains non-finite values")


def load_dataset(path) -> FunctionDataset:
    """Read a dataset file, applying its declared domain map to the grid."""
    path = Path(path)
    if path.suffix == ".bin":
        return _load_binary(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedHeader(f"{path} is empty")
    head = _parse_header(lines[0])
    n, j0 = int(head["n"]), int(head["in_channels"])
    m = int(np.prod(head["sizes"]))
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    rows = []
    for k in range(2 * n):
        index, kind = k // 2, ("input", "target")[k % 2]
        expected = m * j0 if k % 2 == 0 else m
        if k >= len(body):
            raise LengthMismatch(f"record {index} ({kind}) is missing; file ends after "
                                 f"{len(body)} of {2 * n} lines")
        text = body[k].strip()
        try:
            row = np.array([float(v) for v in text.split(",")] if text else [], dtype=float)
        except ValueError:
            raise LengthMismatch(f"record {index} ({kind}) is not a list of numbers") from None
        _check_row(row, expected, index, kind)
        rows.append(row)
    if len(body) > 2 * n:
        raise LengthMismatch(f"file has {len(body) - 2 * n} lines beyond the declared n={n}")
    return _dataset_from(head, rows)


def _load_binary(path: Path) -> FunctionDataset:
    raw = path.read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise MalformedHeader(f"{path} has no header line")
    head = _parse_header(raw[:cut].decode(errors="replace"))
    n, j0 = int(head["n"]), int(head["in_channels"])
    m = int(np.prod(head["sizes"]))
    body = raw[cut + 1:]
    per = m * j0 + m
    if len(body) % 8:
        raise LengthMismatch("binary payload is not a whole number of float64 values")
    data = np.frombuffer(body, dtype="<f8")
    if data.size != n * per:
        index = min(data.size // per, n - 1)
        raise LengthMismatch(f"record {index} is incomplete: payload has {data.size} values, "
                             f"expected {n * per}")
    rows = []
    for i in range(n):
        rec = data[i * per:(i + 1) * per]
        for row, expected, kind in ((rec[:m * j0], m * j0, "input"), (rec[m * j0:], m, "target")):
            _check_row(row, expected, i, kind)
            rows.append(row.astype(float))
    return _dataset_from(head, rows)


# --------------------------------------------------------------------------
# generation and subsampling


def generate_synthetic(seed: int = 0, truth_seed: int = 1, n: int = 100, band: int = 5,
                       ) -> FunctionDataset:
    """Synthetic operator-learning task with a finite FNO as ground truth.

    Inputs are interpolants of i.i.d. ``U(-1, 1)`` values at the ``2B+1``
    centred nodes ``{-B..B} * 2 pi / (2B+1)``; targets are the outputs of one
    width-1 FNO with band-limit ``B`` (kernel variance ``1/(2B+1)``, unit skip
    and head variances) drawn with ``truth_seed``.
    """
    m = 2 * band + 1
    grid = TorusGrid.centered(m)
    values = np.random.default_rng(seed).uniform(-1.0, 1.0, (n, m))
    inputs = [GridFunction(grid, v) for v in values]
    config = fno_architecture(band, 1.0 / m, 1.0, 1.0)
    params = sample_fno_params(config, 1, np.random.default_rng(truth_seed))
    targets = eval_fno_many(params, inputs, grid)[..., 0]
    meta = {"seed": int(seed), "truth_seed": int(truth_seed), "band": int(band),
            "generator": "synthetic-fno"}
    return FunctionDataset(grid, values[:, :, None], targets, (), DomainMap.identity(grid), meta)


def generate_burgers_standin(seed: int = 0, n: int = 100, m: int = 103, viscosity: float = 0.02,
                             t_final: float = 0.5, modes: int = 6) -> FunctionDataset:
    """Viscous Burgers pairs ``u(., 0) -> u(., t_final)`` on the unit interval.

    Smooth random initial states are evolved with a dealiased pseudo-spectral
    integrating-factor RK4 scheme.  Stored on ``m`` cell-centred points of
    ``(0, 1)`` with the corresponding domain map; meant as a stand-in with the
    layout of an exported benchmark file.
    """
    rng = np.random.default_rng(seed)
    x = (np.arange(m) + 0.5) / m
    k = 2 * np.pi * np.fft.rfftfreq(m, 1.0 / m)
    keep = np.abs(np.fft.rfftfreq(m, 1.0 / m)) <= m // 3
    decay = np.exp(-viscosity * k * k)

    def nonlinear(uh):
        u = np.fft.irfft(uh, m, axis=-1)
        return -0.5j * k * np.fft.rfft(u * u, axis=-1) * keep

    steps = max(1, int(np.ceil(t_final / 1e-3)))
    dt = t_final / steps
    half, full = decay ** (dt / 2), decay ** dt
    amp = rng.standard_normal((n, modes, 2)) / (1.0 + np.arange(modes))[:, None]
    phase = 2 * np.pi * np.arange(1, modes + 1)[:, None] * x
    inputs = amp[:, :, 0] @ np.cos(phase) + amp[:, :, 1] @ np.sin(phase)
    uh = np.fft.rfft(inputs, axis=-1)
    for _ in range(steps):
        k1 = nonlinear(uh)
        k2 = nonlinear(half * (uh + dt / 2 * k1))
        k3 = nonlinear(half * uh + dt / 2 * k2)
        k4 = nonlinear(full * uh + dt * half * k3)
        uh = full * uh + dt / 6 * (full * k1 + 2 * half * (k2 + k3) + k4)
    targets = np.fft.irfft(uh, m, axis=-1)
    dmap = DomainMap((0.0,), (1.0,), (float(x[0]),))
    meta = {"seed": int(seed), "generator": "burgers-standin", "viscosity": viscosity,
            "t_final": t_final}
    return FunctionDataset(dmap.grid((m,)), inputs[:, :, None], targets, (), dmap, meta)


def subsample(ds: FunctionDataset, n_keep: int | None = None, stride=1,
              seed: int = 0) -> FunctionDataset:
    """Keep ``n_keep`` randomly chosen pairs and every ``stride``-th grid node.

    The stride (scalar or per dimension) must divide each grid size so the
    result is again an equispaced periodic grid sharing the first node.
    """
    n_keep = ds.n if n_keep is None else int(n_keep)
    if not 1 <= n_keep <= ds.n:
        raise ValueError(f"n_keep must be in [1, {ds.n}], got {n_keep}")
    strides = [int(s) for s in np.atleast_1d(stride)]
    if len(strides) == 1:
        strides = strides * ds.grid.dim
    if len(strides) != ds.grid.dim or any(s < 1 for s in strides):
        raise ValueError(f"invalid stride {stride}")
    if any(m % s for m, s in zip(ds.grid.sizes, strides)):
        raise ValueError(f"stride {strides} does not divide grid sizes {ds.grid.sizes}; "
                         "the result would not be equispaced and periodic")
    if n_keep == ds.n:
        idx = np.arange(ds.n)
    else:
        idx = np.sort(np.random.default_rng(seed).choice(ds.n, n_keep, replace=False))
    grid = TorusGrid(tuple(m // s for m, s in zip(ds.grid.sizes, strides)), ds.grid.origin)
    nodes = np.meshgrid(*[np.arange(0, m, s) for m, s in zip(ds.grid.sizes, strides)],
                        indexing="ij")
    flat = np.ravel_multi_index([a.ravel() for a in nodes], ds.grid.sizes)
    meta = dict(ds.meta)
    return FunctionDataset(grid, ds.inputs[idx][:, flat], ds.targets[idx][:, flat],
                           tuple(ds.ids[i] for i in idx), ds.domain_map, meta)
