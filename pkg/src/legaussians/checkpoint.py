"""Binary checkpoint container.

Layout (little-endian)::

    magic    7 bytes  b"LEG3D\\0\\0"
    version  u32      = 1
    count    u32      number of sections
    then per section:
      name   16 bytes ASCII, NUL padded (GAUSS, CODEBOOK, DECODER, SMOOTHMLP, META)
      length u64      payload bytes
      payload

GAUSS     u32 n, u32 d_s, f32 positions (n,3), rotations (n,4), log_scales (n,3),
          opacity_raw (n), colors (n,3), semantics (n,d_s), uncertainty_raw (n),
          i32 labels (n)
CODEBOOK  u32 N, u32 d_clip, u32 d_dino, f32 lambda_dino, f32 entries (N, d_clip+d_dino)
DECODER,  i32 pe_frequencies (-1: none), u32 layers, then per layer
SMOOTHMLP u32 out, u32 in, f32 weight (out,in), f32 bias (out)
META      UTF-8 JSON object

Every section is optional. Arrays are stored as float32; float32 inputs
round-trip bit-exactly.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .heads import MLP
from .quantizer import Codebook
from .scene import GaussianCloud

MAGIC = b"LEG3D\x00\x00"
VERSION = 1
SECTIONS = ("GAUSS", "CODEBOOK", "DECODER", "SMOOTHMLP", "META")
NAME_BYTES = 16


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedSectionError(CheckpointError):
    def __init__(self, section: str, detail: str = ""):
        self.section = section
        super().__init__(f"checkpoint truncated in section {section}" + (f": {detail}" if detail else ""))


@dataclass
class SceneCheckpoint:
    gaussians: GaussianCloud | None = None
    codebook: Codebook | None = None
    decoder: MLP | None = None
    smooth_mlp: MLP | None = None
    meta: dict = field(default_factory=dict)


class _Reader:
    def __init__(self, buf: bytes, section: str):
        self.buf = buf
        self.pos = 0
        self.section = section

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedSectionError(self.section, f"needed {n} bytes at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, dtype, shape) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(shape))
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(dtype).reshape(shape)


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _pack_gauss(c: GaussianCloud) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<II", len(c), c.semantic_dim))
    for name in GaussianCloud.PARAMS:
        out.write(_f32(getattr(c, name)))
    out.write(np.ascontiguousarray(c.labels, dtype="<i4").tobytes())
    return out.getvalue()


def _unpack_gauss(r: _Reader) -> GaussianCloud:
    n, ds = r.unpack("II")
    shapes = {"positions": (n, 3), "rotations": (n, 4), "log_scales": (n, 3), "opacity_raw": (n,),
              "colors": (n, 3), "semantics": (n, ds), "uncertainty_raw": (n,)}
    kw = {name: r.array(np.float32, shapes[name]) for name in GaussianCloud.PARAMS}
    return GaussianCloud(**kw, labels=r.array(np.int32, (n,)))


def _pack_codebook(cb: Codebook) -> bytes:
    return struct.pack("<IIIf", cb.n, cb.d_clip, cb.d_dino, cb.lambda_dino) + _f32(cb.entries)


def _unpack_codebook(r: _Reader) -> Codebook:
    n, dc, dd, lam = r.unpack("IIIf")
    return Codebook(r.array(np.float32, (n, dc + dd)), dc, dd, float(lam))


def _pack_mlp(m: MLP) -> bytes:
    out = io.BytesIO()
    pe = -1 if m.pe_frequencies is None else m.pe_frequencies
    out.write(struct.pack("<iI", pe, len(m.weights)))
    for W, b in zip(m.weights, m.biases):
        out.write(struct.pack("<II", *W.shape))
        out.write(_f32(W))
        out.write(_f32(b))
    return out.getvalue()


def _unpack_mlp(r: _Reader) -> MLP:
    pe, layers = r.unpack("iI")
    weights, biases = [], []
    for _ in range(layers):
        n_out, n_in = r.unpack("II")
        weights.append(r.array(np.float32, (n_out, n_in)))
        biases.append(r.array(np.float32, (n_out,)))
    return MLP(weights, biases, None if pe < 0 else pe)


def save_checkpoint(path, ckpt: SceneCheckpoint) -> None:
    sections = []
    if ckpt.gaussians is not None:
        sections.append(("GAUSS", _pack_gauss(ckpt.gaussians)))
    if ckpt.codebook is not None:
        sections.append(("CODEBOOK", _pack_codebook(ckpt.codebook)))
    if ckpt.decoder is not None:
        sections.append(("DECODER", _pack_mlp(ckpt.decoder)))
    if ckpt.smooth_mlp is not None:
        sections.append(("SMOOTHMLP", _pack_mlp(ckpt.smooth_mlp)))
    sections.append(("META", json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(sections)))
        for name, payload in sections:
            fh.write(name.encode("ascii").ljust(NAME_BYTES, b"\x00"))
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_checkpoint(path) -> SceneCheckpoint:
    buf = Path(path).read_bytes()
    if buf[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {buf[:len(MAGIC)]!r}")
    head = _Reader(buf[len(MAGIC):], "header")
    version, count = head.unpack("II")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    ckpt = SceneCheckpoint()
    for k in range(count):
        head.section = f"section table entry {k}"
        name = head.take(NAME_BYTES).rstrip(b"\x00").decode("ascii", errors="replace")
        head.section = name
        (length,) = head.unpack("Q")
        r = _Reader(head.take(length), name)
        if name == "GAUSS":
            ckpt.gaussians = _unpack_gauss(r)
        elif name == "CODEBOOK":
            ckpt.codebook = _unpack_codebook(r)
        elif name == "DECODER":
            ckpt.decoder = _unpack_mlp(r)
        elif name == "SMOOTHMLP":
            ckpt.smooth_mlp = _unpack_mlp(r)
        elif name == "META":
            ckpt.meta = json.loads(r.buf.decode("utf-8"))
        else:
            raise CheckpointError(f"{path}: unknown section {name!r}")
        if r.pos != len(r.buf) and name != "META":
            raise CheckpointError(f"{path}: section {name} has {len(r.buf) - r.pos} trailing bytes")
    return ckpt
