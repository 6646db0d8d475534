"""Resolution-progressive codestream (``.wcc``).

Layout, all integers little-endian::

    "WCPC" | version u16 | width u32 | height u32 | levels u8 |
    codeblock_size u8 | packet_count u16 | packet_count x u32 lengths |
    packet 1 | packet 2 | ... | packet levels+1

Packet 1 carries the code blocks of the deepest LL band. Packet ``r`` (r > 1)
carries the HL, LH and HH blocks at depth ``levels - r + 2``, which is what
is needed to go from resolution ``r - 1`` to ``r``. Packet ``levels + 1``
completes the full-size image.

Inside a packet every block is stored as ``u16 payload length | payload``,
subbands in HL, LH, HH order and blocks in raster order within a subband.

A block payload is one byte holding the number of magnitude bit-planes
``P``; when ``P > 0`` it is followed by a token stream that expands to the
bit-packed sign plane and the ``P`` magnitude planes (MSB first), each plane
padded to a whole byte. Tokens are a byte ``t``: ``t < 0x80`` stands for a
run of ``t + 1`` zero bytes, ``t >= 0x80`` introduces ``t - 0x7f`` literal
bytes.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import wavelet
from .errors import (BadMagic, CorruptBlock, CorruptHeader, StreamWriteFailure,
                     TruncatedStream, UnsupportedVersion)

MAGIC = b"WCPC"
VERSION = 1
CODEBLOCK = 16
EXTENSION = ".wcc"

_FIXED = struct.Struct("<4sHIIBBH")
MAX_PLANES = 32
_MAX_RUN = 128


# block coder

def _rle_encode(data: np.ndarray) -> bytes:
    n = data.shape[0]
    if n == 0:
        return b""
    zero = data == 0
    # run boundaries: indices where zero-ness changes
    edges = np.flatnonzero(zero[1:] != zero[:-1]) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [n]))
    raw = data.tobytes()
    out = bytearray()
    for s, e in zip(starts.tolist(), ends.tolist()):
        if zero[s]:
            length = e - s
            while length > 0:
                chunk = min(length, _MAX_RUN)
                out.append(chunk - 1)
                length -= chunk
        else:
            while s < e:
                chunk = min(e - s, _MAX_RUN)
                out.append(0x7F + chunk)
                out += raw[s:s + chunk]
                s += chunk
    return bytes(out)


def _rle_decode(tokens: bytes, size: int) -> bytes:
    out = bytearray()
    i = 0
    n = len(tokens)
    while len(out) < size:
        if i >= n:
            raise CorruptBlock("token stream ends before all planes are filled")
        t = tokens[i]
        i += 1
        if t < 0x80:
            out += bytes(t + 1)
        else:
            count = t - 0x7F
            if i + count > n:
                raise CorruptBlock("literal token runs past end of payload")
            out += tokens[i:i + count]
            i += count
    if len(out) != size or i != n:
        raise CorruptBlock("token stream does not match block dimensions")
    return bytes(out)


def encode_block(coeffs) -> bytes:
    """Code an integer grid of at most 16x16 coefficients."""
    g = np.asarray(coeffs)
    if g.ndim != 2 or g.shape[0] > CODEBLOCK or g.shape[1] > CODEBLOCK:
        raise ValueError(f"code block must be at most {CODEBLOCK}x{CODEBLOCK}, got {g.shape}")
    flat = g.astype(np.int64).ravel()
    mag = np.abs(flat)
    planes = int(mag.max()).bit_length() if flat.size else 0
    if planes > MAX_PLANES:
        raise ValueError("coefficient magnitude exceeds 32 bits")
    if planes == 0:
        return bytes([0])
    shifts = np.arange(planes - 1, -1, -1, dtype=np.int64)[:, None]
    bits = np.empty((planes + 1, flat.size), dtype=np.uint8)
    bits[0] = flat < 0
    bits[1:] = (mag[None, :] >> shifts) & 1
    packed = np.packbits(bits, axis=1).ravel()
    return bytes([planes]) + _rle_encode(packed)


def decode_block(payload: bytes, dims: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`encode_block` for a block of shape ``dims`` (rows, cols)."""
    h, w = dims
    n = h * w
    if not payload:
        raise CorruptBlock("empty block payload")
    planes = payload[0]
    if planes > MAX_PLANES:
        raise CorruptBlock(f"block declares {planes} bit-planes")
    if planes == 0:
        if len(payload) != 1:
            raise CorruptBlock("zero-plane block carries extra bytes")
        return np.zeros((h, w), dtype=wavelet.COEFF_DTYPE)
    row_bytes = (n + 7) // 8
    raw = _rle_decode(payload[1:], (planes + 1) * row_bytes)
    packed = np.frombuffer(raw, dtype=np.uint8).reshape(planes + 1, row_bytes)
    bits = np.unpackbits(packed, axis=1, count=n).astype(np.int64)
    weights = (np.int64(1) << np.arange(planes - 1, -1, -1, dtype=np.int64))
    mag = weights @ bits[1:]
    neg = bits[0].astype(bool)
    if np.any(neg & (mag == 0)):
        raise CorruptBlock("sign bit set on a zero coefficient")
    vals = np.where(neg, -mag, mag)
    return vals.reshape(h, w).astype(wavelet.COEFF_DTYPE)


def _block_origins(shape: tuple[int, int]):
    h, w = shape
    for y in range(0, h, CODEBLOCK):
        for x in range(0, w, CODEBLOCK):
            yield y, x


def _encode_band(band: np.ndarray, out: bytearray) -> None:
    for y, x in _block_origins(band.shape):
        payload = encode_block(band[y:y + CODEBLOCK, x:x + CODEBLOCK])
        out += struct.pack("<H", len(payload))
        out += payload


def _decode_band(view: memoryview, pos: int, shape: tuple[int, int],
                 packet: int, block_index: int):
    band = np.zeros(shape, dtype=wavelet.COEFF_DTYPE)
    for y, x in _block_origins(shape):
        if pos + 2 > len(view):
            raise CorruptBlock(f"packet {packet}, block {block_index}: missing block length",
                               packet, block_index)
        (length,) = struct.unpack_from("<H", view, pos)
        pos += 2
        if pos + length > len(view):
            raise CorruptBlock(f"packet {packet}, block {block_index}: payload overruns packet",
                               packet, block_index)
        dims = (min(CODEBLOCK, shape[0] - y), min(CODEBLOCK, shape[1] - x))
        try:
            band[y:y + dims[0], x:x + dims[1]] = decode_block(bytes(view[pos:pos + length]), dims)
        except CorruptBlock as exc:
            raise CorruptBlock(f"packet {packet}, block {block_index}: {exc}",
                               packet, block_index) from None
        pos += length
        block_index += 1
    return band, pos, block_index


# stream framing

@dataclass(frozen=True)
class Header:
    width: int
    height: int
    levels: int
    codeblock_size: int
    packet_lengths: tuple[int, ...]
    version: int = VERSION

    @property
    def size(self) -> int:
        return _FIXED.size + 4 * len(self.packet_lengths)

    @property
    def total_size(self) -> int:
        return self.size + sum(self.packet_lengths)

    def prefix_size(self, packets: int) -> int:
        """Bytes of header plus the first ``packets`` packets."""
        return self.size + sum(self.packet_lengths[:packets])

    def pack(self) -> bytes:
        head = _FIXED.pack(MAGIC, self.version, self.width, self.height, self.levels,
                           self.codeblock_size, len(self.packet_lengths))
        return head + struct.pack(f"<{len(self.packet_lengths)}I", *self.packet_lengths)


def _packet_bands(levels: int, packet: int):
    """Names and depths of the subbands carried by 1-based ``packet``."""
    if packet == 1:
        return [("LL", levels)]
    depth = levels - packet + 2
    return [("HL", depth), ("LH", depth), ("HH", depth)]


def encode_pyramid(pyramid: wavelet.SubbandPyramid) -> bytes:
    pyramid.validate()
    packets = []
    for r in range(1, pyramid.levels + 2):
        buf = bytearray()
        for name, depth in _packet_bands(pyramid.levels, r):
            if name == "LL":
                band = pyramid.ll
            else:
                band = pyramid.details[depth - 1][("HL", "LH", "HH").index(name)]
            _encode_band(band, buf)
        packets.append(bytes(buf))
    header = Header(pyramid.base_width, pyramid.base_height, pyramid.levels, CODEBLOCK,
                    tuple(len(p) for p in packets))
    return header.pack() + b"".join(packets)


def encode(image, levels: int = wavelet.DEFAULT_LEVELS) -> bytes:
    """Losslessly compress ``image`` into a codestream."""
    return encode_pyramid(wavelet.forward_dwt(image, levels))


def write(stream: bytes, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(stream)
    except OSError as exc:
        raise StreamWriteFailure(f"cannot write {path}: {exc}") from exc


class _Reader:
    """Counts every byte pulled from the underlying source."""

    def __init__(self, source):
        if isinstance(source, (bytes, bytearray, memoryview)):
            self._fh = io.BytesIO(bytes(source))
            self._owned = False
        elif isinstance(source, (str, os.PathLike)):
            self._fh = open(source, "rb")
            self._owned = True
        else:
            self._fh = source
            self._owned = False
        self.bytes_read = 0

    def read(self, n: int) -> bytes:
        data = self._fh.read(n)
        self.bytes_read += len(data)
        return data

    def close(self):
        if self._owned:
            self._fh.close()


def _read_header(reader: _Reader) -> Header:
    fixed = reader.read(_FIXED.size)
    if len(fixed) >= 4 and fixed[:4] != MAGIC:
        raise BadMagic(f"bad magic {fixed[:4]!r}, expected {MAGIC!r}")
    if len(fixed) < _FIXED.size:
        raise TruncatedStream("stream ends inside the header", packet=None)
    _, version, width, height, levels, cbs, count = _FIXED.unpack(fixed)
    if version != VERSION:
        raise UnsupportedVersion(f"codestream version {version} is not supported (want {VERSION})")
    if cbs != CODEBLOCK:
        raise CorruptHeader(f"code-block size {cbs} is not supported")
    if not 0 <= levels <= wavelet.MAX_LEVELS or count != levels + 1:
        raise CorruptHeader(f"{levels} levels with {count} packets is inconsistent")
    if width == 0 or height == 0:
        raise CorruptHeader("zero image extent in header")
    table = reader.read(4 * count)
    if len(table) < 4 * count:
        raise TruncatedStream("stream ends inside the packet length table", packet=None)
    lengths = struct.unpack(f"<{count}I", table)
    return Header(width, height, levels, cbs, lengths, version)


def read_header(source) -> Header:
    reader = _Reader(source)
    try:
        return _read_header(reader)
    finally:
        reader.close()


def _decode_packets(reader: _Reader, header: Header, upto: int):
    """Read and decode packets ``1..upto``; returns LL and detail triplets by depth."""
    ll = None
    details: dict[int, tuple] = {}
    block_index = 0
    for r in range(1, upto + 1):
        length = header.packet_lengths[r - 1]
        data = reader.read(length)
        if len(data) < length:
            raise TruncatedStream(f"stream truncated in packet {r}", packet=r)
        view = memoryview(data)
        pos = 0
        block_index = 0
        bands = []
        for name, depth in _packet_bands(header.levels, r):
            shapes = wavelet.subband_shapes(header.height, header.width, depth)
            band, pos, block_index = _decode_band(view, pos, shapes[name], r, block_index)
            bands.append(band)
        if pos != length:
            raise CorruptBlock(f"packet {r}: {length - pos} trailing bytes after last block",
                               r, block_index)
        if r == 1:
            ll = bands[0]
        else:
            details[header.levels - r + 2] = tuple(bands)
    return ll, details


def decode_partial(stream, r: int) -> tuple[np.ndarray, int]:
    """LL grid at resolution ``r`` and the number of bytes consumed.

    Only the header and packets ``1..r`` are read from ``stream`` (bytes,
    a path, or a binary file object); nothing after them is touched.
    """
    reader = _Reader(stream)
    try:
        header = _read_header(reader)
        wavelet.check_resolution(r, header.levels)
        ll, details = _decode_packets(reader, header, r)
    finally:
        reader.close()
    for depth in range(header.levels, header.levels - r + 1, -1):
        ll = wavelet.synthesize_level(ll, *details[depth])
    return ll, reader.bytes_read


def decode_pyramid(stream) -> wavelet.SubbandPyramid:
    reader = _Reader(stream)
    try:
        header = _read_header(reader)
        ll, details = _decode_packets(reader, header, header.levels + 1)
    finally:
        reader.close()
    return wavelet.SubbandPyramid(header.levels, header.width, header.height, ll,
                                  [details[d] for d in range(1, header.levels + 1)])


def decode_full(stream) -> np.ndarray:
    """Decode every packet and return the original ``uint8`` image."""
    pyramid = decode_pyramid(stream)
    ll = pyramid.ll
    for hl, lh, hh in reversed(pyramid.details):
        ll = wavelet.synthesize_level(ll, hl, lh, hh)
    if ll.min() < 0 or ll.max() > 255:
        raise CorruptBlock("decoded samples fall outside [0, 255]")
    return ll.astype(np.uint8)


@dataclass(frozen=True)
class StreamInfo:
    width: int
    height: int
    levels: int
    codeblock_size: int
    header_size: int
    packet_lengths: tuple[int, ...]
    total_size: int

    def format(self) -> str:
        lines = [
            f"dimensions   {self.width}x{self.height}",
            f"levels       {self.levels}",
            f"codeblock    {self.codeblock_size}x{self.codeblock_size}",
            f"header bytes {self.header_size}",
            "packet  resolution  bytes",
        ]
        for i, n in enumerate(self.packet_lengths, start=1):
            res = str(i) if i <= self.levels else "full"
            lines.append(f"{i:>6}  {res:>10}  {n}")
        lines.append(f"total bytes  {self.total_size}")
        return "\n".join(lines)


def inspect(stream) -> StreamInfo:
    """Header summary; reads nothing past the packet length table."""
    h = read_header(stream)
    return StreamInfo(h.width, h.height, h.levels, h.codeblock_size, h.size,
                      h.packet_lengths, h.total_size)
