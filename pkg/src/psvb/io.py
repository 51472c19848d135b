"""Binary container, CSV/PGM interchange and JSON chain descriptions.

Container layout (all little-endian)::

    b"PSVB"                 magic
    u16                     format version
    u8                      kind (signal=0, filter=1, mask=2, weights=3, spline=4)
    u8                      complex flag
    u32                     number of header integers H
    H x u32                 kind-specific header
    u64                     number of float64 payload values P
    P x f64                 payload (complex arrays interleave re, im)
    u32                     CRC-32 of the payload bytes

Kind-specific headers and payloads:

signal
    ``[d, n_1..n_d, N]``; payload is the ``(N, n_1, ..., n_d)`` array, C order.
filter
    ``[d, M, N, T, g, (n_1..n_d if g)]``; payload is the ``T x d`` offsets
    followed by the ``T x M x N`` matrices. ``g = 1`` records a grid hint.
mask
    ``[d, n_1..n_d]``; payload holds 0.0 / 1.0 per bin.
spline
    ``[C, Q]``; payload is, per spline, ``lo, hi`` and ``Q`` knot values.
weights
    ``[d, L, F, (M_i, N_i, T_i, b_i) x L, (a_j, C_j, Q_j) x (L - 1)]`` with
    ``b_i`` flagging a bias on filter ``i`` and activation codes
    ``a_j`` (relu=0, spline=1, identity=2). Payload: each filter as in the
    filter kind, then the present biases, then each spline layer as in the
    spline kind.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .builders import (
    FrameShift, GenShift, Householder, ModuleChain, Mult, NToPN, OneToN, Patch, Projection,
    Scaled, USVh, as_offsets, centered_offsets, random_frame, random_orthogonal,
    random_unit_vector,
)
from .inverse import SamplingMask
from .lipschitz import Activation, CnnDenoiser, SplineActivation
from .multifilter import MultiFilter
from .signal import Grid, MultiSignal

MAGIC = b"PSVB"
VERSION = 1

KIND_SIGNAL = 0
KIND_FILTER = 1
KIND_MASK = 2
KIND_WEIGHTS = 3
KIND_SPLINE = 4
KIND_NAMES = {KIND_SIGNAL: "signal", KIND_FILTER: "filter", KIND_MASK: "mask",
              KIND_WEIGHTS: "weights", KIND_SPLINE: "spline"}

_ACT_CODES = {"relu": 0, "spline": 1, "identity": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class FileFormatError(ValueError):
    """Base class; ``code`` distinguishes the failure for scripts."""

    code = 20


class MagicError(FileFormatError):
    code = 21


class VersionError(FileFormatError):
    code = 22


class TruncatedError(FileFormatError):
    code = 23


class ChecksumError(FileFormatError):
    code = 24


class KindError(FileFormatError):
    code = 25


class LayoutError(FileFormatError):
    """Header and payload disagree, or trailing bytes follow the checksum."""

    code = 26


# ---------------------------------------------------------------------------
# raw container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RawFile:
    kind: int
    is_complex: bool
    header: tuple
    payload: np.ndarray


def _floats(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    if np.iscomplexobj(a):
        return a.astype("<c16").view("<f8").ravel()
    return a.astype("<f8").ravel()


def _complex(p: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(p, dtype="<f8").view("<c16").astype(np.complex128)


def encode(kind: int, is_complex: bool, header, payload) -> bytes:
    header = [int(h) for h in header]
    if any(h < 0 or h > 0xFFFFFFFF for h in header):
        raise ValueError("header integers must fit in u32")
    body = np.ascontiguousarray(payload, dtype="<f8").tobytes()
    parts = [
        MAGIC,
        struct.pack("<HBBI", VERSION, kind, int(bool(is_complex)), len(header)),
        struct.pack(f"<{len(header)}I", *header),
        struct.pack("<Q", len(body) // 8),
        body,
        struct.pack("<I", zlib.crc32(body)),
    ]
    return b"".join(parts)


def decode(blob: bytes, expect: int | None = None) -> RawFile:
    """Parse and validate a container; ``expect`` restricts the kind."""
    blob = bytes(blob)
    if len(blob) < 4 or blob[:4] != MAGIC:
        if len(blob) < 4 and MAGIC.startswith(blob):
            raise TruncatedError("file ends inside the magic number")
        raise MagicError("not a PSVB file (bad magic)")
    pos = 4

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedError(f"file truncated while reading {what} ({len(blob)} bytes)")
        out = blob[pos:pos + n]
        pos += n
        return out

    version, kind, cflag, nhead = struct.unpack("<HBBI", take(8, "the preamble"))
    if version != VERSION:
        raise VersionError(f"unsupported format version {version} (this build reads {VERSION})")
    if kind not in KIND_NAMES:
        raise KindError(f"unknown file kind {kind}")
    if expect is not None and kind != expect:
        raise KindError(f"expected a {KIND_NAMES[expect]} file, found a {KIND_NAMES[kind]} file")
    if cflag not in (0, 1):
        raise LayoutError(f"invalid complex flag {cflag}")
    header = struct.unpack(f"<{nhead}I", take(4 * nhead, "the header"))
    (count,) = struct.unpack("<Q", take(8, "the payload length"))
    body = take(8 * count, "the payload")
    (crc,) = struct.unpack("<I", take(4, "the checksum"))
    if pos != len(blob):
        raise LayoutError(f"{len(blob) - pos} unexpected bytes after the checksum")
    if zlib.crc32(body) != crc:
        raise ChecksumError("payload checksum mismatch")
    payload = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(payload)):
        raise LayoutError("payload contains non-finite values")
    return RawFile(kind, bool(cflag), header, payload)


class _Cursor:
    def __init__(self, seq, what):
        self.seq = seq
        self.pos = 0
        self.what = what

    def take(self, n: int):
        if self.pos + n > len(self.seq):
            raise LayoutError(f"{self.what} shorter than its declared layout")
        out = self.seq[self.pos:self.pos + n]
        self.pos += n
        return out

    def one(self) -> int:
        return int(self.take(1)[0])

    def done(self):
        if self.pos != len(self.seq):
            raise LayoutError(f"{self.what} longer than its declared layout")


# ---------------------------------------------------------------------------
# per-kind encoders
# ---------------------------------------------------------------------------


def _filter_parts(H: MultiFilter, with_grid: bool = True):
    g = H.grid_hint if with_grid else None
    header = [H.dims, H.out_channels, H.in_channels, H.num_taps, int(g is not None)]
    if g is not None:
        header += list(g.sizes)
    payload = np.concatenate([H.offsets.astype(np.float64).ravel(), _floats(H.matrices)])
    return header, payload


def _read_filter(head: _Cursor, body: _Cursor, is_complex: bool) -> MultiFilter:
    d, M, N, T, g = (head.one() for _ in range(5))
    grid = Grid(tuple(head.one() for _ in range(d))) if g else None
    offs = body.take(T * d)
    if not np.all(offs == np.round(offs)):
        raise LayoutError("filter offsets must be integers")
    count = T * M * N * (2 if is_complex else 1)
    raw = body.take(count)
    mats = _complex(raw) if is_complex else raw
    return MultiFilter(offs.astype(np.int64).reshape(T, d), mats.reshape(T, M, N), grid)


def _spline_parts(splines):
    splines = list(splines)
    q = len(splines[0].values) if splines else 0
    if any(len(s.values) != q for s in splines):
        raise ValueError("all splines in one layer must share the knot count")
    payload = [np.concatenate([[s.lo, s.hi], s.values]) for s in splines]
    return [len(splines), q], (np.concatenate(payload) if payload else np.zeros(0))


def _read_splines(body: _Cursor, count: int, q: int) -> tuple:
    out = []
    for _ in range(count):
        lo, hi = body.take(2)
        out.append(SplineActivation(body.take(q).copy(), lo, hi))
    return tuple(out)


def to_bytes(obj) -> bytes:
    """Serialise a signal, filter, mask, CNN or spline layer."""
    if isinstance(obj, MultiSignal):
        header = [obj.grid.dims, *obj.grid.sizes, obj.channels]
        return encode(KIND_SIGNAL, obj.is_complex, header, _floats(obj.data))
    if isinstance(obj, MultiFilter):
        header, payload = _filter_parts(obj)
        return encode(KIND_FILTER, obj.is_complex, header, payload)
    if isinstance(obj, SamplingMask):
        m = obj.mask
        return encode(KIND_MASK, False, [m.ndim, *m.shape], m.astype(np.float64).ravel())
    if isinstance(obj, CnnDenoiser):
        return _weights_bytes(obj)
    if isinstance(obj, (list, tuple)) and all(isinstance(s, SplineActivation) for s in obj):
        header, payload = _spline_parts(obj)
        return encode(KIND_SPLINE, False, header, payload)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _weights_bytes(net: CnnDenoiser) -> bytes:
    if any(H.is_complex for H in net.filters):
        raise ValueError("network weights must be real")
    biases = net.biases or (None,) * len(net.filters)
    header = [net.dims, len(net.filters), 0]
    payload = []
    for H, b in zip(net.filters, biases):
        fh, fp = _filter_parts(H, with_grid=False)
        header += [fh[1], fh[2], fh[3], int(b is not None)]
        payload.append(fp)
    for b in biases:
        if b is not None:
            payload.append(np.asarray(b, dtype=np.float64))
    for act in net.activations:
        if act.kind == "spline":
            sh, sp = _spline_parts(act.splines)
            payload.append(sp)
        else:
            sh = [0, 0]
        header += [_ACT_CODES[act.kind], *sh]
    header[2] = len(header) - 3
    return encode(KIND_WEIGHTS, False, header, np.concatenate(payload))


def from_bytes(blob: bytes, expect: str | None = None):
    """Inverse of :func:`to_bytes`; ``expect`` is a kind name such as ``"filter"``."""
    want = None
    if expect is not None:
        codes = {v: k for k, v in KIND_NAMES.items()}
        if expect not in codes:
            raise ValueError(f"unknown kind {expect!r}")
        want = codes[expect]
    raw = decode(blob, want)
    head = _Cursor(raw.header, "header")
    body = _Cursor(raw.payload, "payload")
    if raw.kind == KIND_SIGNAL:
        d = head.one()
        sizes = tuple(head.one() for _ in range(d))
        N = head.one()
        n = N * int(np.prod(sizes)) * (2 if raw.is_complex else 1)
        data = body.take(n)
        data = _complex(data) if raw.is_complex else data.copy()
        obj = MultiSignal(Grid(sizes), data.reshape((N,) + sizes))
    elif raw.kind == KIND_FILTER:
        obj = _read_filter(head, body, raw.is_complex)
    elif raw.kind == KIND_MASK:
        d = head.one()
        sizes = tuple(head.one() for _ in range(d))
        vals = body.take(int(np.prod(sizes)))
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise LayoutError("mask entries must be 0 or 1")
        obj = SamplingMask(vals.reshape(sizes) == 1.0, "file")
    elif raw.kind == KIND_SPLINE:
        count, q = head.one(), head.one()
        obj = list(_read_splines(body, count, q))
    else:
        obj = _read_weights(head, body)
    head.done()
    body.done()
    return obj


def _read_weights(head: _Cursor, body: _Cursor) -> CnnDenoiser:
    d, L, _ = head.one(), head.one(), head.one()
    shapes = [tuple(head.one() for _ in range(4)) for _ in range(L)]
    filters = []
    for M, N, T, _b in shapes:
        offs = body.take(T * d)
        if not np.all(offs == np.round(offs)):
            raise LayoutError("filter offsets must be integers")
        mats = body.take(T * M * N).reshape(T, M, N)
        filters.append(MultiFilter(offs.astype(np.int64).reshape(T, d), mats))
    biases = [body.take(M).copy() if b else None for M, _N, _T, b in shapes]
    acts = []
    for _ in range(L - 1):
        code, count, q = head.one(), head.one(), head.one()
        if code not in _ACT_NAMES:
            raise LayoutError(f"unknown activation code {code}")
        splines = _read_splines(body, count, q) if code == 1 else ()
        acts.append(Activation(_ACT_NAMES[code], splines))
    has_bias = any(b is not None for b in biases)
    return CnnDenoiser(tuple(filters), tuple(acts), tuple(biases) if has_bias else None)


def save(path, obj) -> None:
    Path(path).write_bytes(to_bytes(obj))


def load(path, expect: str | None = None):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    return from_bytes(blob, expect)


def file_kind(path) -> str:
    return KIND_NAMES[decode(Path(path).read_bytes()).kind]


# ---------------------------------------------------------------------------
# CSV and PGM
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(complex(v)) if isinstance(v, complex) else repr(float(v))


def export_csv(x: MultiSignal, path) -> None:
    """One header line, then one line per row of the last axis (channel-major)."""
    dtype = "complex128" if x.is_complex else "float64"
    lines = [f"# channels={x.channels} grid={x.grid} dtype={dtype}"]
    rows = x.data.reshape(-1, x.grid.sizes[-1])
    for row in rows:
        lines.append(",".join(_fmt(complex(v) if x.is_complex else v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def import_csv(path) -> MultiSignal:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise FileFormatError("CSV signal must start with a '# channels=... grid=...' header")
    try:
        fields = dict(item.split("=", 1) for item in text[0][1:].split())
        channels = int(fields["channels"])
        grid = Grid.parse(fields["grid"])
        is_complex = fields.get("dtype", "float64") == "complex128"
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"bad CSV header: {text[0]!r}") from exc
    conv = complex if is_complex else float
    try:
        values = [conv(v.replace("(", "").replace(")", "")) for line in text[1:] if line.strip()
                  for v in line.split(",")]
    except ValueError as exc:
        raise FileFormatError(f"bad CSV value: {exc}") from exc
    expected = channels * grid.K
    if len(values) != expected:
        raise FileFormatError(f"CSV holds {len(values)} values, header implies {expected}")
    arr = np.array(values, dtype=np.complex128 if is_complex else np.float64)
    return MultiSignal(grid, arr.reshape((channels,) + grid.sizes))


def read_pgm(path) -> MultiSignal:
    """Read a P2/P5 graymap as a one-channel signal with values in ``[0, 1]``."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im)
            mode = im.mode
    except (OSError, UnidentifiedImageError) as exc:
        raise FileFormatError(f"cannot read graymap {path}: {exc}") from exc
    if arr.ndim != 2:
        raise FileFormatError(f"{path} is not a single-channel graymap (mode {mode})")
    peak = 255.0 if mode == "L" else 65535.0
    data = arr.astype(np.float64) / peak
    return MultiSignal(Grid(data.shape), data[None])


def write_pgm(x: MultiSignal, path, bits: int = 8) -> None:
    """Write channel 0 clipped to ``[0, 1]`` as a binary graymap."""
    from PIL import Image

    if x.grid.dims != 2:
        raise ValueError("graymaps hold 2-d images")
    img = np.clip(np.real(x.data[0]), 0.0, 1.0)
    if bits == 8:
        im = Image.fromarray(np.rint(img * 255).astype(np.uint8), mode="L")
    elif bits == 16:
        im = Image.fromarray(np.rint(img * 65535).astype(np.uint16))
    else:
        raise ValueError("bits must be 8 or 16")
    im.save(path, format="PPM")


def read_image(path) -> MultiSignal:
    """Load a container signal, a CSV signal or a graymap by extension."""
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return read_pgm(path)
    if suffix == ".csv":
        return import_csv(path)
    return load(path, "signal")


# ---------------------------------------------------------------------------
# JSON chain descriptions
# ---------------------------------------------------------------------------


class ChainSpecError(ValueError):
    pass


def _matrix(value, base: Path, rng, shape, kind: str) -> np.ndarray:
    """Inline nested list, ``{"file": path}`` (CSV or container signal) or ``"random"``."""
    if isinstance(value, str) and value == "random":
        if kind == "orthogonal":
            return random_orthogonal(shape[0], rng)
        if kind == "frame":
            return random_frame(shape[0], shape[1], rng)
        if kind == "unit":
            return random_unit_vector(shape[0], rng)
        raise ChainSpecError(f"no random generator for {kind}")
    if isinstance(value, dict) and "file" in value:
        path = base / value["file"]
        try:
            sig = import_csv(path) if path.suffix.lower() == ".csv" else load(path, "signal")
        except (OSError, FileFormatError) as exc:
            raise ChainSpecError(f"cannot load matrix from {path}: {exc}") from exc
        return np.asarray(sig.data[0])
    try:
        return np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ChainSpecError(f"bad matrix value {value!r}") from exc


def _module_from_dict(entry: dict, dims: int, base: Path, rng):
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ChainSpecError(f"module entry needs a 'kind': {entry!r}")
    kind = entry["kind"]
    p = {k: v for k, v in entry.items() if k not in ("kind", "scale")}
    d = int(p.get("dims", dims))

    def offsets(key, count=None):
        if key in p:
            return as_offsets(p[key], d)
        if count is None:
            raise ChainSpecError(f"{kind} needs '{key}'")
        return centered_offsets(count, d)

    def shift(key="k1"):
        if key not in p:
            raise ChainSpecError(f"{kind} needs '{key}'")
        k = np.atleast_1d(np.asarray(p[key], dtype=np.int64))
        return tuple(int(v) for v in k)

    def size(key):
        if key not in p:
            raise ChainSpecError(f"{kind} needs '{key}'")
        return int(p[key])

    if kind == "patch":
        mod = Patch(offsets("offsets", p.get("size")), int(p.get("channels", 1)))
    elif kind == "mult":
        N = p.get("channels")
        U = _matrix(p.get("U", "random"), base, rng, (int(N or 0),), "orthogonal")
        mod = Mult(U, d)
    elif kind == "one_to_n":
        N = size("channels")
        U = _matrix(p.get("U", "random"), base, rng, (N, N), "orthogonal")
        cols = int(p.get("taps", U.shape[1]))
        U = U[:, :cols]
        mod = OneToN(U, offsets("offsets", U.shape[1]))
    elif kind == "n_to_pn":
        N, factor = size("channels"), size("factor")
        U = _matrix(p.get("U", "random"), base, rng, (N * factor,), "orthogonal")
        mod = NToPN(U, offsets("offsets", factor), N)
    elif kind == "gen_shift":
        mod = GenShift(offsets("shifts"))
    elif kind == "frame_shift":
        shifts = offsets("shifts")
        A = _matrix(p.get("A", "random"), base, rng, (size("out_channels"), shifts.shape[0]), "frame")
        mod = FrameShift(A, shifts)
    elif kind == "usv":
        shifts = offsets("shifts")
        n = shifts.shape[0]
        U = _matrix(p.get("U", "random"), base, rng, (n,), "orthogonal")
        V = _matrix(p.get("V", "random"), base, rng, (n,), "orthogonal")
        mod = USVh(U, shifts, V)
    elif kind == "projection":
        N = size("channels")
        rank = int(p.get("rank", 1))
        if "basis" in p:
            B = _matrix(p["basis"], base, rng, (N, rank), "frame")
        else:
            B = random_orthogonal(N, rng)[:, :rank]
        mod = Projection(B.reshape(N, -1), shift(), N)
    elif kind == "householder":
        if "u" in p:
            u = _matrix(p["u"], base, rng, (0,), "unit").ravel()
        else:
            u = random_unit_vector(size("channels"), rng)
        mod = Householder(u, shift())
    elif kind == "identity":
        mod = Mult(np.eye(size("channels")), d)
    else:
        raise ChainSpecError(f"unknown module kind {kind!r}")
    if "scale" in entry:
        mod = Scaled(mod, float(entry["scale"]))
    return mod


def parse_chain_spec(spec, base_dir=".") -> ModuleChain:
    """Build a :class:`ModuleChain` from a JSON document (text or parsed dict).

    Top-level keys: ``dims`` (default 1), ``seed`` (for ``"random"``
    parameters) and ``modules``, a list of ``{"kind": ..., ...}`` entries.
    An optional ``"scale"`` on an entry multiplies that module (useful as a
    negative control). ``{"kind": "bcop", "channels": N, "length": L}``
    expands to a random Householder chain.
    """
    if isinstance(spec, (str, bytes)):
        try:
            spec = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise ChainSpecError(f"invalid JSON: {exc}") from exc
    if not isinstance(spec, dict) or not isinstance(spec.get("modules"), list):
        raise ChainSpecError("chain spec needs a 'modules' list")
    dims = int(spec.get("dims", 1))
    rng = np.random.default_rng(spec.get("seed", 0))
    base = Path(base_dir)
    mods = []
    try:
        for entry in spec["modules"]:
            if isinstance(entry, dict) and entry.get("kind") == "bcop":
                from .builders import bcop_chain

                chain = bcop_chain(int(entry["channels"]), int(entry["length"]), dims, seed=rng,
                                   rank=int(entry.get("rank", 1)))
                mods.extend(chain.modules)
            else:
                mods.append(_module_from_dict(entry, dims, base, rng))
        chain = ModuleChain(tuple(mods))
        # builders validate their parameters; surface that at load time
        for m in chain.modules:
            m.compile()
        return chain
    except ChainSpecError:
        raise
    except (ValueError, TypeError, KeyError, IndexError) as exc:
        raise ChainSpecError(f"invalid module parameters: {exc}") from exc


def load_chain_spec(path) -> ModuleChain:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ChainSpecError(f"cannot read {path}: {exc}") from exc
    return parse_chain_spec(text, path.parent)
