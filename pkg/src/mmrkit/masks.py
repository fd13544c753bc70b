"""Binary masks and their set algebra: RLE codec, polygon rasterization, IoU.

A binary mask is a dense boolean numpy array of shape (H, W). Its run-length
encoded form is a plain dict ``{"size": [H, W], "counts": ...}`` where counts
is either a list of ints (the canonical, uncompressed form) or a compressed
ASCII string. Runs are counted in column-major (Fortran) order and always
start with a background run, which may have length zero.

The compressed counts scheme is the de-facto standard used by COCO-family
annotation files: each count is emitted as a little-endian sequence of 5-bit
chunks, one chunk per character, offset by 48 into the printable range
48..111; bit 0x20 of a character marks continuation and bit 0x10 of the last
chunk triggers sign extension. Counts at index 3 and beyond are stored as the
difference from the count two positions earlier. This module reproduces that
scheme bit for bit so encoded masks interoperate with existing files.
"""

from __future__ import annotations

import numpy as np

from .errors import ParseError

__all__ = [
    "decode_rle",
    "encode_rle",
    "compress_rle",
    "compress_counts",
    "decompress_counts",
    "rle_to_dict",
    "rasterize_polygon",
    "decode_payload",
    "intersection_area",
    "union_area",
    "iou",
    "mask_area",
]


def compress_counts(counts: list[int]) -> str:
    """Pack a list of run lengths into the compressed ASCII form."""
    out = bytearray()
    for i, count in enumerate(counts):
        x = int(count)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            chunk = x & 0x1F
            x >>= 5
            more = (x != -1) if (chunk & 0x10) else (x != 0)
            if more:
                chunk |= 0x20
            out.append(chunk + 48)
    return out.decode("ascii")


def decompress_counts(data: str | bytes) -> list[int]:
    """Unpack compressed ASCII counts back into a list of run lengths."""
    if isinstance(data, bytes):
        try:
            data = data.decode("ascii")
        except UnicodeDecodeError as exc:
            raise ParseError(f"compressed counts are not ASCII: {exc}") from exc
    counts: list[int] = []
    p = 0
    n = len(data)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise ParseError("compressed counts truncated mid-value")
            c = ord(data[p]) - 48
            if not 0 <= c < 64:
                raise ParseError(f"invalid character {data[p]!r} in compressed counts")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        if x < 0:
            raise ParseError("compressed counts decode to a negative run length")
        counts.append(x)
    return counts


def _counts_as_list(rle: dict) -> list[int]:
    counts = rle["counts"]
    if isinstance(counts, (str, bytes)):
        return decompress_counts(counts)
    return [int(c) for c in counts]


def decode_rle(rle: dict) -> np.ndarray:
    """Decode an RLE object (list or compressed counts) to a boolean mask."""
    height, width = (int(v) for v in rle["size"])
    counts = _counts_as_list(rle)
    if any(c < 0 for c in counts):
        raise ParseError("run lengths must be non-negative")
    total = sum(counts)
    if total != height * width:
        raise ParseError(
            f"run lengths sum to {total}, expected {height}x{width}={height * width}"
        )
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return flat.reshape((height, width), order="F")


def encode_rle(mask: np.ndarray) -> dict:
    """Encode a boolean mask as an RLE object with canonical integer counts."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    height, width = mask.shape
    flat = mask.ravel(order="F")
    if flat.size == 0:
        return {"size": [height, width], "counts": [0]}
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return {"size": [height, width], "counts": counts}


def compress_rle(rle: dict) -> dict:
    """Return the same mask with counts in the compressed string form."""
    counts = rle["counts"]
    if isinstance(counts, bytes):
        counts = counts.decode("ascii")
    if isinstance(counts, str):
        return {"size": [int(v) for v in rle["size"]], "counts": counts}
    return {
        "size": [int(v) for v in rle["size"]],
        "counts": compress_counts([int(c) for c in counts]),
    }


def rle_to_dict(rle: dict) -> dict:
    """JSON-ready copy of an RLE object (bytes counts become str)."""
    counts = rle["counts"]
    if isinstance(counts, bytes):
        counts = counts.decode("ascii")
    elif not isinstance(counts, str):
        counts = [int(c) for c in counts]
    return {"size": [int(v) for v in rle["size"]], "counts": counts}


def _validate_ring(ring) -> tuple[np.ndarray, np.ndarray]:
    if len(ring) < 6 or len(ring) % 2 != 0:
        raise ValueError(
            f"polygon ring needs >=3 points as a flat even-length list, got {len(ring)} values"
        )
    xs = np.asarray(ring[0::2], dtype=float)
    ys = np.asarray(ring[1::2], dtype=float)
    return xs, ys


def _fill_ring(mask: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> None:
    # Even-odd scanline fill over pixel centers (x + 0.5, y + 0.5). An edge
    # crosses the scanline under the half-open rule ymin <= y < ymax, so
    # vertices never double-count.
    height, width = mask.shape
    x1, y1 = xs, ys
    x2, y2 = np.roll(xs, -1), np.roll(ys, -1)
    row_lo = max(0, int(np.floor(ys.min() - 0.5)))
    row_hi = min(height - 1, int(np.ceil(ys.max())))
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        crossing = ((y1 <= yc) & (yc < y2)) | ((y2 <= yc) & (yc < y1))
        if not crossing.any():
            continue
        t = (yc - y1[crossing]) / (y2[crossing] - y1[crossing])
        x_cross = np.sort(x1[crossing] + t * (x2[crossing] - x1[crossing]))
        # A center is inside when an odd number of crossings lie strictly to
        # its right, i.e. between an odd-indexed/even-indexed crossing pair.
        for xa, xb in zip(x_cross[0::2], x_cross[1::2]):
            lo = max(0, int(np.ceil(xa - 0.5)))
            hi = min(width - 1, int(np.ceil(xb - 0.5)) - 1)
            if lo <= hi:
                mask[row, lo : hi + 1] = True


def rasterize_polygon(rings: list[list[float]], height: int, width: int) -> np.ndarray:
    """Rasterize polygon rings to a mask; rings are unioned, fill is even-odd.

    A pixel is foreground iff its center lies inside a ring. Degenerate rings
    (zero area) produce no pixels.
    """
    mask = np.zeros((int(height), int(width)), dtype=bool)
    for ring in rings:
        xs, ys = _validate_ring(ring)
        _fill_ring(mask, xs, ys)
    return mask


def decode_payload(segmentation, height: int, width: int) -> np.ndarray:
    """Decode an annotation's segmentation payload (RLE dict or ring list)."""
    if isinstance(segmentation, dict):
        mask = decode_rle(segmentation)
        if mask.shape != (height, width):
            raise ValueError(
                f"RLE size {mask.shape} does not match image size {(height, width)}"
            )
        return mask
    return rasterize_polygon(segmentation, height, width)


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def mask_area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def intersection_area(a: np.ndarray, b: np.ndarray) -> int:
    _check_shapes(a, b)
    return int(np.count_nonzero(np.logical_and(a, b)))


def union_area(a: np.ndarray, b: np.ndarray) -> int:
    _check_shapes(a, b)
    return int(np.count_nonzero(np.logical_or(a, b)))


def iou(a: np.ndarray, b: np.ndarray, *, empty_iou: float = 1.0) -> float:
    """Intersection over union; two empty masks score ``empty_iou``.

    The default of 1.0 treats a correctly predicted "no region" as a hit;
    pass ``empty_iou=0.0`` for the strict variant.
    """
    union = union_area(a, b)
    if union == 0:
        return float(empty_iou)
    return intersection_area(a, b) / union
