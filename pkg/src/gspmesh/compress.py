"""Block-based spectral geometry codec.

Each overlapped submesh is described by ``c`` quantized spectral
coefficients per axis.  Bases are computed from connectivity alone
(binary Laplacian), so the decoder rebuilds exactly the encoder's bases
from the transmitted face list and block layout.

Bitstream layout (little endian, version 1)::

    magic "GSPC" | u16 version | u16 reserved | u8 q_c | 3 reserved bytes
    u32 length, config echo (UTF-8 JSON object of SpectralConfig fields)
    u32 n, u32 face count, face count x 3 u32
    u32 block count, u32 n_d, per block: u32 part, u32 core size, n_d x u32 ids
    block count x u32 processing order
    per block (in processing order): u32 block id, u32 c, 3 x f64 min,
        3 x f64 max, u8 constant-axis flags, u32 payload bytes, payload
        (c x 3 values of q_c bits, row major, MSB first)
"""

from __future__ import annotations

import io
import json
import struct
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import partition as part
from . import pipeline, spectral
from .mesh import Mesh, build_edges

MAGIC = b"GSPC"
VERSION = 1


class BitstreamError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EncodedBlock:
    """Quantized coefficients of one submesh.

    ``values`` has shape ``(c, 3)`` with entries below ``2**q_c``;
    axes whose coefficients are all equal are flagged in ``constant`` and
    decode to ``lo``.
    """

    block_id: int
    values: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    q_c: int
    constant: np.ndarray

    @property
    def c(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class EncodedMesh:
    faces: np.ndarray
    n: int
    submeshes: list
    order: tuple
    blocks: list
    config: pipeline.SpectralConfig
    q_c: int
    version: int = VERSION

    @property
    def k(self):
        return len(self.submeshes)

    @property
    def n_d(self):
        return self.submeshes[0].size

    def bpv(self):
        """Bits per vertex of the coefficient payload (connectivity excluded)."""
        return 3.0 * self.q_c * sum(b.c for b in self.blocks) / self.n


def quantize(x, q_c):
    """Uniform scalar quantization of each column over its own [min, max].

    Returns integer bin indices in ``[0, 2**q_c)``, the per-column bounds
    and a flag for columns with zero range.
    """
    if not 1 <= q_c <= 16:
        raise ValueError("q_c must be between 1 and 16")
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(axis=0), x.max(axis=0)
    constant = hi == lo
    levels = 1 << q_c
    step = np.where(constant, 1.0, (hi - lo) / levels)
    idx = np.floor((x - lo) / step)
    idx = np.clip(idx, 0, levels - 1).astype(np.uint32)
    idx[:, constant] = 0
    return idx, lo, hi, constant


def dequantize(values, lo, hi, q_c, constant):
    """Midpoint reconstruction of :func:`quantize` output."""
    step = (hi - lo) / (1 << q_c)
    out = lo + (values.astype(np.float64) + 0.5) * step
    return np.where(constant, lo, out)


def encode_block(submesh, coords, basis, q_c=12, block_id=None):
    """Quantized spectral coefficients of one submesh.

    ``coords`` are the global mesh coordinates.
    """
    E = spectral.gft(basis, np.asarray(coords)[submesh.global_indices])
    values, lo, hi, constant = quantize(E, q_c)
    bid = submesh.part if block_id is None else block_id
    return EncodedBlock(int(bid), values, lo, hi, int(q_c), constant)


def decode_block(block, basis):
    """Local ``(n_d, 3)`` coordinates from a block and its basis."""
    if basis.c != block.c:
        raise BitstreamError(f"block {block.block_id} has {block.c} coefficients, "
                             f"basis has {basis.c} columns")
    E = dequantize(block.values, block.lo, block.hi, block.q_c, block.constant)
    return spectral.igft(basis, E)


def bits_per_vertex(q_c, c, k, n):
    """``3 q_c c k / n`` with ``n`` the total vertex count."""
    if min(q_c, c, k, n) <= 0:
        raise ValueError("all arguments must be positive")
    return 3.0 * q_c * c * k / n


def _codec_config(config):
    if config.weighting != "binary":
        # decoder only knows connectivity
        config = config.with_(weighting="binary")
    return config


def compress_mesh(mesh, config, q_c=12, timings=None):
    """Encode the geometry of ``mesh`` block by block.

    Parameters
    ----------
    mesh : Mesh
    config : pipeline.SpectralConfig
        ``weighting`` is forced to ``"binary"``.  In ``"doi"`` mode dynamic
        OI chooses each block's subspace size, and the bases actually used
        are re-derived from those sizes by :func:`pipeline.replay_bases`.
    q_c : int
        Bits per coefficient.
    timings : dict, optional
        Filled with stage durations in seconds.
    """
    config = _codec_config(config)
    t0 = time.perf_counter()
    blocks = pipeline.prepare_blocks(mesh, config)
    t1 = time.perf_counter()
    if config.basis_mode == "doi":
        chosen = pipeline.track_bases(blocks.submeshes, blocks.order, config,
                                      coords=mesh.vertices)
        tracking = pipeline.replay_bases(blocks.submeshes, blocks.order,
                                         chosen.subspace_sizes, config)
    else:
        tracking = pipeline.track_bases(blocks.submeshes, blocks.order, config)
    t2 = time.perf_counter()
    enc = [encode_block(blocks.submeshes[i], mesh.vertices, tracking.bases[i], q_c, i)
           for i in blocks.order]
    t3 = time.perf_counter()
    if timings is not None:
        timings.update(partition=t1 - t0, basis=t2 - t1, encode=t3 - t2)
    return EncodedMesh(mesh.faces.copy(), mesh.n_vertices, blocks.submeshes, blocks.order,
                       enc, config, int(q_c))


def decoder_bases(encoded):
    """Bases the decoder derives from connectivity and block sizes only."""
    config = encoded.config
    if config.basis_mode == "doi":
        sizes = np.zeros(encoded.k, dtype=np.int64)
        for b in encoded.blocks:
            sizes[b.block_id] = b.c
        return pipeline.replay_bases(encoded.submeshes, encoded.order, sizes, config).bases
    return pipeline.track_bases(encoded.submeshes, encoded.order, config).bases


def decompress_mesh(encoded, timings=None):
    """Reconstruct the mesh from an :class:`EncodedMesh`."""
    t0 = time.perf_counter()
    bases = decoder_bases(encoded)
    t1 = time.perf_counter()
    pieces = [(encoded.submeshes[b.block_id], decode_block(b, bases[b.block_id]))
              for b in encoded.blocks]
    v = part.reconstruct_weighted(pieces, encoded.n, encoded.config.stitching)
    if timings is not None:
        timings.update(basis=t1 - t0, decode=time.perf_counter() - t1)
    return Mesh(v, encoded.faces)


# ---------------------------------------------------------------------------
# bitstream

def pack_bits(values, bits):
    """Pack nonnegative integers into ``bits`` bits each, MSB first."""
    v = np.asarray(values, dtype=np.uint32).ravel()
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint32)
    b = ((v[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(b.ravel()).tobytes()


def unpack_bits(data, bits, count):
    b = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:count * bits]
    if b.shape[0] != count * bits:
        raise BitstreamError("payload too short")
    b = b.reshape(count, bits).astype(np.uint32)
    weights = (1 << np.arange(bits - 1, -1, -1)).astype(np.uint32)
    return b @ weights


def write_bitstream(encoded, fh):
    """Serialize ``encoded`` to a binary file object."""
    cfg = encoded.config
    w = fh.write
    w(MAGIC + struct.pack("<HHB3x", encoded.version, 0, encoded.q_c))
    echo = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    w(struct.pack("<I", len(echo)) + echo)
    w(struct.pack("<II", encoded.n, encoded.faces.shape[0]))
    w(np.ascontiguousarray(encoded.faces, dtype="<u4").tobytes())
    w(struct.pack("<II", encoded.k, encoded.n_d))
    for s in encoded.submeshes:
        w(struct.pack("<II", s.part, s.core_size))
        w(np.ascontiguousarray(s.global_indices, dtype="<u4").tobytes())
    w(np.asarray(encoded.order, dtype="<u4").tobytes())
    for b in encoded.blocks:
        payload = pack_bits(b.values, b.q_c)
        flags = int(sum(1 << i for i in range(3) if b.constant[i]))
        w(struct.pack("<II3d3dBI", b.block_id, b.c, *b.lo, *b.hi, flags, len(payload)))
        w(payload)


def encode_to_bytes(encoded):
    buf = io.BytesIO()
    write_bitstream(encoded, buf)
    return buf.getvalue()


def _read(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise BitstreamError("unexpected end of bitstream")
    return data


def read_bitstream(fh):
    """Parse a bitstream written by :func:`write_bitstream`."""
    head = _read(fh, 12)
    if head[:4] != MAGIC:
        raise BitstreamError("not a GSPC bitstream")
    version, _, q_c = struct.unpack("<HHB3x", head[4:])
    if version != VERSION:
        raise BitstreamError(f"unsupported bitstream version {version}")
    (length,) = struct.unpack("<I", _read(fh, 4))
    try:
        config = pipeline.SpectralConfig(**json.loads(_read(fh, length).decode("utf-8")))
    except (TypeError, ValueError) as exc:
        raise BitstreamError(f"bad config echo: {exc}") from exc
    n, n_faces = struct.unpack("<II", _read(fh, 8))
    faces = np.frombuffer(_read(fh, 12 * n_faces), dtype="<u4").reshape(-1, 3).astype(np.int64)
    n_blocks, n_d = struct.unpack("<II", _read(fh, 8))
    # decoder sees connectivity only; coordinates stay zero
    mesh = Mesh(np.zeros((n, 3)), faces)
    adj = build_edges(mesh).adjacency()
    subs = []
    for _ in range(n_blocks):
        part_id, core = struct.unpack("<II", _read(fh, 8))
        gidx = np.frombuffer(_read(fh, 4 * n_d), dtype="<u4").astype(np.int64)
        subs.append(part._make_submesh(mesh, adj, part_id, gidx, core))
    order = tuple(np.frombuffer(_read(fh, 4 * n_blocks), dtype="<u4").astype(int).tolist())
    blocks = []
    bfmt = "<II3d3dBI"
    for _ in range(n_blocks):
        vals = struct.unpack(bfmt, _read(fh, struct.calcsize(bfmt)))
        bid, c = vals[0], vals[1]
        lo, hi = np.array(vals[2:5]), np.array(vals[5:8])
        flags, nbytes = vals[8], vals[9]
        values = unpack_bits(_read(fh, nbytes), q_c, 3 * c).reshape(c, 3)
        constant = np.array([(flags >> i) & 1 == 1 for i in range(3)])
        blocks.append(EncodedBlock(bid, values, lo, hi, q_c, constant))
    return EncodedMesh(faces, n, subs, order, blocks, config, q_c, version)


def decode_from_bytes(data):
    return read_bitstream(io.BytesIO(data))


def save_encoded(encoded, path):
    with open(path, "wb") as fh:
        write_bitstream(encoded, fh)


def load_encoded(path):
    with open(path, "rb") as fh:
        return read_bitstream(fh)
