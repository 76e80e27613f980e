"""Datasets: generation, ensemble de-linking and serialization.

Two on-disk formats are supported, both with 1-based symbols.

CSV::

    # version=1
    # kind=trajectory
    # N=8
    # K=3
    # n_v=2
    # M=2
    # L=5
    # seed=7
    1,0,1,2,3,1,2,3,1,2
    ...

one row ``m,t,x_1,...,x_N`` per trajectory ``m`` (1-based) and time ``t``
(``0..L``).  Ensemble files use ``kind=ensemble`` and ``M_t=a;b;...`` in
place of ``M``; there ``m`` indexes the sample within snapshot ``t``.

Binary: little-endian header (see ``_BIN_HEADER``) followed by one byte
per symbol, trajectory-major / time-major / node-minor.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Init, ModelSpec, simulate_with_uniforms, trajectory_rng
from .errors import CountExceedsPool, ParseError, VersionMismatch

FORMAT_VERSION = 1
_MAGIC = b"LPCA"
# magic, version, kind, N, K, n_v, has_seed, seed
_BIN_HEADER = struct.Struct("<4sHBIIIBq")
_KINDS = {"trajectory": 0, "ensemble": 1}


@dataclass
class TrajectoryDataset:
    """``states[m, t, n]`` holds ``X_n^m(t)`` (0-based symbols)."""

    spec: ModelSpec
    states: np.ndarray
    seed: int | None = None
    T_hash: str | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states)
        if self.states.ndim != 3 or self.states.shape[2] != self.spec.N:
            raise ValueError(f"states must have shape (M, L+1, {self.spec.N})")
        if self.states.shape[0] < 1 or self.states.shape[1] < 2:
            raise ValueError("need M >= 1 and L >= 1")

    @property
    def M(self) -> int:
        return self.states.shape[0]

    @property
    def L(self) -> int:
        return self.states.shape[1] - 1

    def subset(self, idx) -> "TrajectoryDataset":
        return TrajectoryDataset(self.spec, self.states[np.asarray(idx)], self.seed, self.T_hash)


@dataclass
class EnsembleDataset:
    """``snapshots[t]`` is an ``(M_t, N)`` array of configurations at time ``t``."""

    spec: ModelSpec
    snapshots: list
    seed: int | None = None
    T_hash: str | None = None

    def __post_init__(self):
        self.snapshots = [np.asarray(s) for s in self.snapshots]
        if len(self.snapshots) < 2:
            raise ValueError("need snapshots for t = 0..L with L >= 1")
        for t, s in enumerate(self.snapshots):
            if s.ndim != 2 or s.shape[1] != self.spec.N or s.shape[0] < 1:
                raise ValueError(f"snapshot {t} must be a nonempty (M_t, {self.spec.N}) array")

    @property
    def L(self) -> int:
        return len(self.snapshots) - 1

    @property
    def counts(self) -> list[int]:
        return [s.shape[0] for s in self.snapshots]


def matrix_hash(T) -> str:
    return hashlib.sha256(np.ascontiguousarray(T, dtype="<f8").tobytes()).hexdigest()[:16]


# ------------------------------------------------------------- generation

def generate_multitraj(
    spec: ModelSpec,
    T,
    init: Init,
    M: int,
    L: int,
    seed: int,
    block: int = 4096,
) -> TrajectoryDataset:
    """``M`` independent trajectories of length ``L``.

    Trajectory ``m`` is driven by its own stream ``trajectory_rng(seed, m)``:
    the initial state is drawn first, then ``L*N`` uniforms time-major.  It
    therefore coincides with ``simulate_trajectory`` on that stream and does
    not depend on ``M`` or ``block``.
    """
    if M < 1 or L < 1:
        raise ValueError("M and L must be ≥ 1")
    T = np.asarray(T, dtype=float)
    dtype = np.uint8 if spec.K <= 255 else np.int64
    states = np.empty((M, L + 1, spec.N), dtype=dtype)
    n_init = init.n_uniforms(spec)
    for lo in range(0, M, block):
        hi = min(lo + block, M)
        buf = np.empty((hi - lo, n_init + L * spec.N))
        for i, m in enumerate(range(lo, hi)):
            buf[i] = trajectory_rng(seed, m).random(buf.shape[1])
        x0 = init.from_uniforms(spec, buf[:, :n_init])
        u = buf[:, n_init:].reshape(hi - lo, L, spec.N)
        states[lo:hi] = simulate_with_uniforms(spec, T, x0, u)
    return TrajectoryDataset(spec, states, seed, matrix_hash(T))


def delink_to_ensemble(
    data: TrajectoryDataset,
    per_time_counts: int | Sequence[int],
    seed: int,
    replace: bool = True,
) -> EnsembleDataset:
    """Per-time snapshots drawn from independent trajectory indices.

    A fresh set of indices is drawn at every ``t`` (stream ``(seed, t)``),
    which removes any cross-time linkage.
    """
    L = data.L
    counts = [int(per_time_counts)] * (L + 1) if np.isscalar(per_time_counts) else list(per_time_counts)
    if len(counts) != L + 1:
        raise ValueError(f"expected {L + 1} per-time counts")
    snaps = []
    for t, c in enumerate(counts):
        if c < 1:
            raise ValueError("per-time counts must be ≥ 1")
        if not replace and c > data.M:
            raise CountExceedsPool(f"M_t = {c} exceeds the pool of {data.M} trajectories at t = {t}")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 1, t])))
        idx = rng.choice(data.M, size=c, replace=replace)
        snaps.append(data.states[idx, t].copy())
    return EnsembleDataset(data.spec, snaps, seed, data.T_hash)


# ---------------------------------------------------------------- writing

def _header_lines(kind: str, spec: ModelSpec, counts: dict, seed, T_hash) -> list[str]:
    lines = [f"# version={FORMAT_VERSION}", f"# kind={kind}", f"# N={spec.N}", f"# K={spec.K}", f"# n_v={spec.n_v}"]
    lines += [f"# {k}={v}" for k, v in counts.items()]
    lines.append(f"# seed={'none' if seed is None else int(seed)}")
    if T_hash:
        lines.append(f"# T_hash={T_hash}")
    return lines


def _rows(block: np.ndarray, prefix_m, t: int) -> list[str]:
    sym = (block.astype(np.int64) + 1).astype(str)
    return [f"{m},{t}," + ",".join(r) for m, r in zip(prefix_m, sym)]


def write_dataset(path, dataset, format: str = "csv") -> None:
    """Serialize a trajectory or ensemble dataset (``format`` is csv or binary)."""
    path = Path(path)
    if format == "csv":
        path.write_text(_to_csv(dataset))
    elif format == "binary":
        path.write_bytes(_to_binary(dataset))
    else:
        raise ValueError(f"unknown format {format!r}")


def _to_csv(ds) -> str:
    spec = ds.spec
    out: list[str] = []
    if isinstance(ds, TrajectoryDataset):
        out += _header_lines("trajectory", spec, {"M": ds.M, "L": ds.L}, ds.seed, ds.T_hash)
        for m in range(ds.M):
            sym = (ds.states[m].astype(np.int64) + 1).astype(str)
            out += [f"{m + 1},{t}," + ",".join(r) for t, r in enumerate(sym)]
    elif isinstance(ds, EnsembleDataset):
        out += _header_lines("ensemble", spec, {"L": ds.L, "M_t": ";".join(map(str, ds.counts))}, ds.seed, ds.T_hash)
        for t, snap in enumerate(ds.snapshots):
            out += _rows(snap, range(1, snap.shape[0] + 1), t)
    else:
        raise TypeError(f"cannot serialize {type(ds).__name__}")
    return "\n".join(out) + "\n"


def _to_binary(ds) -> bytes:
    spec = ds.spec
    if spec.K > 255:
        raise ValueError("binary format supports K ≤ 255")
    kind = "trajectory" if isinstance(ds, TrajectoryDataset) else "ensemble"
    seed = ds.seed
    head = _BIN_HEADER.pack(_MAGIC, FORMAT_VERSION, _KINDS[kind], spec.N, spec.K, spec.n_v,
                            seed is not None, 0 if seed is None else int(seed))
    th = (ds.T_hash or "").encode()
    head += struct.pack("<H", len(th)) + th
    if kind == "trajectory":
        head += struct.pack("<QQ", ds.M, ds.L)
        payload = (ds.states.astype(np.int64) + 1).astype(np.uint8).tobytes()
    else:
        head += struct.pack("<Q", ds.L) + struct.pack(f"<{ds.L + 1}Q", *ds.counts)
        payload = b"".join((s.astype(np.int64) + 1).astype(np.uint8).tobytes() for s in ds.snapshots)
    return head + payload


# ---------------------------------------------------------------- reading

def read_dataset(path):
    """Load a dataset written by :func:`write_dataset`; the format is sniffed."""
    raw = Path(path).read_bytes()
    if raw[:4] == _MAGIC:
        return _from_binary(raw)
    return _from_csv(raw.decode())


def _parse_int(value: str, key: str, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"header {key!r} is not an integer: {value!r}", line=line) from None


def _from_csv(text: str):
    header: dict[str, str] = {}
    rows: list[tuple[int, list[str]]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" not in body:
                raise ParseError(f"malformed header {line!r}", line=lineno)
            k, v = body.split("=", 1)
            header[k.strip()] = v.strip()
        else:
            rows.append((lineno, line.split(",")))
    for key in ("version", "kind", "N", "K", "n_v"):
        if key not in header:
            raise ParseError(f"missing header key {key!r}", line=1)
    version = _parse_int(header["version"], "version", 1)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported format version {version}")
    spec = ModelSpec(K=_parse_int(header["K"], "K", 1), N=_parse_int(header["N"], "N", 1),
                     n_v=_parse_int(header["n_v"], "n_v", 1))
    seed = None if header.get("seed", "none") == "none" else _parse_int(header["seed"], "seed", 1)
    T_hash = header.get("T_hash")
    kind = header["kind"]

    N, K = spec.N, spec.K
    parsed = np.empty((len(rows), N + 2), dtype=np.int64)
    for i, (lineno, fields) in enumerate(rows):
        if len(fields) != N + 2:
            raise ParseError(f"expected {N + 2} fields, got {len(fields)}", line=lineno)
        try:
            vals = [int(f) for f in fields]
        except ValueError:
            raise ParseError("non-integer field", line=lineno) from None
        sym = vals[2:]
        bad = [j for j, s in enumerate(sym) if not 1 <= s <= K]
        if bad:
            raise ParseError(f"symbol {sym[bad[0]]} outside 1..{K}", line=lineno, offset=bad[0] + 3)
        parsed[i] = vals

    if kind == "trajectory":
        M, L = _parse_int(header["M"], "M", 1), _parse_int(header["L"], "L", 1)
        if len(rows) != M * (L + 1):
            raise ParseError(f"expected {M * (L + 1)} data rows, found {len(rows)}")
        want_m = np.repeat(np.arange(1, M + 1), L + 1)
        want_t = np.tile(np.arange(L + 1), M)
        _check_index(parsed, rows, want_m, want_t)
        states = (parsed[:, 2:] - 1).reshape(M, L + 1, N).astype(np.uint8 if K <= 255 else np.int64)
        return TrajectoryDataset(spec, states, seed, T_hash)
    if kind == "ensemble":
        L = _parse_int(header["L"], "L", 1)
        counts = [_parse_int(c, "M_t", 1) for c in header["M_t"].split(";")]
        if len(counts) != L + 1:
            raise ParseError("M_t list length does not match L")
        if len(rows) != sum(counts):
            raise ParseError(f"expected {sum(counts)} data rows, found {len(rows)}")
        want_m = np.concatenate([np.arange(1, c + 1) for c in counts])
        want_t = np.repeat(np.arange(L + 1), counts)
        _check_index(parsed, rows, want_m, want_t)
        sym = (parsed[:, 2:] - 1).astype(np.uint8 if K <= 255 else np.int64)
        snaps = np.split(sym, np.cumsum(counts)[:-1])
        return EnsembleDataset(spec, snaps, seed, T_hash)
    raise ParseError(f"unknown dataset kind {kind!r}", line=2)


def _check_index(parsed, rows, want_m, want_t):
    bad = np.flatnonzero((parsed[:, 0] != want_m) | (parsed[:, 1] != want_t))
    if bad.size:
        raise ParseError("rows out of (m, t) order", line=rows[bad[0]][0])


def _from_binary(raw: bytes):
    try:
        magic, version, kind, N, K, n_v, has_seed, seed = _BIN_HEADER.unpack_from(raw, 0)
    except struct.error:
        raise ParseError("truncated binary header", offset=0) from None
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported format version {version}")
    spec = ModelSpec(K=K, N=N, n_v=n_v)
    off = _BIN_HEADER.size
    (hl,) = struct.unpack_from("<H", raw, off)
    off += 2
    T_hash = raw[off : off + hl].decode() or None
    off += hl
    seed = seed if has_seed else None
    if kind == _KINDS["trajectory"]:
        M, L = struct.unpack_from("<QQ", raw, off)
        off += 16
        payload = _payload(raw, off, M * (L + 1) * N, K)
        return TrajectoryDataset(spec, payload.reshape(M, L + 1, N), seed, T_hash)
    if kind == _KINDS["ensemble"]:
        (L,) = struct.unpack_from("<Q", raw, off)
        off += 8
        counts = list(struct.unpack_from(f"<{L + 1}Q", raw, off))
        off += 8 * (L + 1)
        payload = _payload(raw, off, sum(counts) * N, K)
        snaps = np.split(payload.reshape(-1, N), np.cumsum(counts)[:-1])
        return EnsembleDataset(spec, snaps, seed, T_hash)
    raise ParseError(f"unknown dataset kind code {kind}", offset=6)


def _payload(raw: bytes, off: int, size: int, K: int) -> np.ndarray:
    if len(raw) - off != size:
        raise ParseError(f"payload has {len(raw) - off} bytes, expected {size}", offset=off)
    sym = np.frombuffer(raw, dtype=np.uint8, count=size, offset=off)
    bad = np.flatnonzero((sym < 1) | (sym > K))
    if bad.size:
        raise ParseError(f"symbol {sym[bad[0]]} outside 1..{K}", offset=off + int(bad[0]))
    return (sym - 1).astype(np.uint8)


# --------------------------------------------------------------- matrices

def write_matrix_csv(path, M) -> None:
    """Row-major CSV with 17 significant digits."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    Path(path).write_text("\n".join(",".join(f"{v:.17g}" for v in row) for row in M) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([float(v) for v in line.replace(";", ",").replace(" ", ",").split(",") if v])
        except ValueError:
            raise ParseError("non-numeric matrix entry", line=lineno) from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ParseError("matrix rows are empty or ragged")
    return np.array(rows)
