"""Binary hash codes, Hamming ranking, and retrieval quality metrics.

Codes are stored bit-packed, one bit per entry, least-significant bit
first within each byte (+1 maps to bit 1, -1 to bit 0).  Hamming
distances come from XOR plus a byte popcount table.  Ranking ties are
broken by original database index, so results are reproducible.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import ndcore as nd
from .errors import ContractError, FormatError, ShapeError
from .networks import Models

CODES_MAGIC = b"XMHC"
CODES_VERSION = 1

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8).reshape(256, 1), axis=1).sum(
    axis=1
).astype(np.int64)

_CHUNK = 256


def binarize(values: np.ndarray) -> np.ndarray:
    """Sign with the tie convention sign(0) = +1."""
    arr = np.asarray(values, dtype=np.float64)
    return np.where(arr >= 0.0, 1.0, -1.0)


@dataclass
class HashCodeMatrix:
    """m binary codes of n_bits each, bit-packed row by row."""

    n_bits: int
    packed: np.ndarray

    def __post_init__(self) -> None:
        if self.n_bits < 1:
            raise ContractError(f"codes need at least one bit, got {self.n_bits}")
        self.packed = np.ascontiguousarray(np.asarray(self.packed, dtype=np.uint8))
        want = (self.n_bits + 7) // 8
        if self.packed.ndim != 2 or self.packed.shape[1] != want:
            raise ShapeError(
                f"packed shape {self.packed.shape} does not hold {self.n_bits}-bit codes"
            )

    @property
    def n(self) -> int:
        return self.packed.shape[0]

    @classmethod
    def from_signs(cls, signs: np.ndarray) -> "HashCodeMatrix":
        """Pack a matrix of -1/+1 entries, first column into the lowest bit."""
        signs = np.asarray(signs, dtype=np.float64)
        if signs.ndim != 2:
            raise ShapeError(f"sign matrix must be 2-D, got shape {signs.shape}")
        if not np.isin(signs, (-1.0, 1.0)).all():
            raise ContractError("sign matrix entries must be -1 or +1")
        bits = (signs > 0).astype(np.uint8)
        return cls(n_bits=signs.shape[1], packed=np.packbits(bits, axis=1, bitorder="little"))

    def to_signs(self) -> np.ndarray:
        bits = np.unpackbits(self.packed, axis=1, count=self.n_bits, bitorder="little")
        return bits.astype(np.float64) * 2.0 - 1.0


def hamming(a: HashCodeMatrix, i: int, b: HashCodeMatrix, j: int) -> int:
    """Hamming distance between code i of a and code j of b."""
    if a.n_bits != b.n_bits:
        raise ShapeError(f"code lengths differ: {a.n_bits} vs {b.n_bits}")
    return int(_POPCOUNT[np.bitwise_xor(a.packed[i], b.packed[j])].sum())


def hamming_matrix(a: HashCodeMatrix, b: HashCodeMatrix) -> np.ndarray:
    """All pairwise Hamming distances as an (a.n, b.n) int64 matrix."""
    if a.n_bits != b.n_bits:
        raise ShapeError(f"code lengths differ: {a.n_bits} vs {b.n_bits}")
    out = np.empty((a.n, b.n), dtype=np.int64)
    for lo in range(0, a.n, _CHUNK):
        hi = min(lo + _CHUNK, a.n)
        xor = np.bitwise_xor(a.packed[lo:hi, None, :], b.packed[None, :, :])
        out[lo:hi] = _POPCOUNT[xor].sum(axis=2)
    return out


def _check_relevance(
    query: HashCodeMatrix, db: HashCodeMatrix, relevance: np.ndarray
) -> np.ndarray:
    rel = np.asarray(relevance)
    if rel.shape != (query.n, db.n):
        raise ShapeError(
            f"relevance shape {rel.shape} does not match ({query.n}, {db.n})"
        )
    if not np.isin(rel, (0, 1)).all():
        raise ContractError("relevance entries must be 0 or 1")
    return rel.astype(bool)


def _average_precision(dist_row: np.ndarray, rel_row: np.ndarray, top_r: Optional[int]) -> float:
    order = np.argsort(dist_row, kind="stable")
    if top_r is not None:
        order = order[:top_r]
    hits = rel_row[order]
    if not hits.any():
        return 0.0
    ranks = np.flatnonzero(hits) + 1
    found = np.arange(1, ranks.size + 1, dtype=np.float64)
    return float(np.mean(found / ranks))


def _thread_count(explicit: Optional[int] = None) -> int:
    if explicit is not None:
        if explicit < 1:
            raise ContractError(f"thread count must be positive, got {explicit}")
        return explicit
    env = os.environ.get("XMH_THREADS")
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ContractError(f"XMH_THREADS must be an integer, got {env!r}") from None
        if value < 1:
            raise ContractError(f"XMH_THREADS must be positive, got {value}")
        return value
    return os.cpu_count() or 1


def _per_query(
    query: HashCodeMatrix,
    db: HashCodeMatrix,
    rel: np.ndarray,
    fn,
    threads: Optional[int],
) -> list:
    """Apply fn(dist_row, rel_row) to every query, in index order.

    Queries are processed in fixed chunks; chunks may run on a thread
    pool, but results are reassembled by index so the outcome does not
    depend on scheduling.
    """
    chunks = [(lo, min(lo + _CHUNK, query.n)) for lo in range(0, query.n, _CHUNK)]

    def work(span: Tuple[int, int]) -> list:
        lo, hi = span
        sub = HashCodeMatrix(query.n_bits, query.packed[lo:hi])
        dist = hamming_matrix(sub, db)
        return [fn(dist[i], rel[lo + i]) for i in range(hi - lo)]

    n_threads = _thread_count(threads)
    if n_threads == 1 or len(chunks) == 1:
        parts = [work(span) for span in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(work, chunks))
    return [item for part in parts for item in part]


def mean_average_precision(
    query: HashCodeMatrix,
    db: HashCodeMatrix,
    relevance: np.ndarray,
    top_r: Optional[int] = None,
    threads: Optional[int] = None,
) -> Tuple[float, int]:
    """MAP over Hamming ranking, plus the count of skipped queries.

    Queries with no relevant database item are skipped and counted.  Ties
    rank by original database index.  With a top_r cutoff, each average
    precision is taken over the relevant items retrieved within the cutoff;
    a query whose cutoff window finds nothing scores 0.
    """
    if top_r is not None and not (1 <= top_r <= db.n):
        raise ContractError(f"top_r must be in [1, {db.n}], got {top_r}")
    rel = _check_relevance(query, db, relevance)
    keep = rel.any(axis=1)
    skipped = int(query.n - keep.sum())

    def fn(dist_row, rel_row):
        if not rel_row.any():
            return None
        return _average_precision(dist_row, rel_row, top_r)

    values = [v for v in _per_query(query, db, rel, fn, threads) if v is not None]
    return (float(np.mean(values)) if values else 0.0), skipped


def precision_at_n(
    query: HashCodeMatrix,
    db: HashCodeMatrix,
    relevance: np.ndarray,
    n: int,
    threads: Optional[int] = None,
) -> float:
    """Mean fraction of relevant items among the n nearest, skipping
    queries that have no relevant database item."""
    if not (1 <= n <= db.n):
        raise ContractError(f"n must be in [1, {db.n}], got {n}")
    rel = _check_relevance(query, db, relevance)

    def fn(dist_row, rel_row):
        if not rel_row.any():
            return None
        order = np.argsort(dist_row, kind="stable")[:n]
        return float(rel_row[order].sum()) / float(n)

    values = [v for v in _per_query(query, db, rel, fn, threads) if v is not None]
    return float(np.mean(values)) if values else 0.0


def pr_by_radius(
    query: HashCodeMatrix,
    db: HashCodeMatrix,
    relevance: np.ndarray,
    threads: Optional[int] = None,
) -> List[Tuple[int, float, float]]:
    """Precision and recall inside each Hamming ball radius 0..n_bits.

    Per query, precision over an empty retrieval set is 1.0 by convention;
    queries with no relevant item are skipped.  Points are averaged over
    the remaining queries, giving n_bits + 1 curve points.
    """
    rel = _check_relevance(query, db, relevance)
    k = query.n_bits

    def fn(dist_row, rel_row):
        if not rel_row.any():
            return None
        total_rel = float(rel_row.sum())
        # Counting sort by distance: retrieved and hit counts per radius.
        retrieved = np.cumsum(np.bincount(dist_row, minlength=k + 1)[: k + 1]).astype(
            np.float64
        )
        hits = np.cumsum(
            np.bincount(dist_row[rel_row], minlength=k + 1)[: k + 1]
        ).astype(np.float64)
        precision = np.where(retrieved > 0, hits / np.maximum(retrieved, 1.0), 1.0)
        recall = hits / total_rel
        return precision, recall

    rows = [v for v in _per_query(query, db, rel, fn, threads) if v is not None]
    if not rows:
        return [(r, 1.0, 0.0) for r in range(k + 1)]
    precision = np.mean([p for p, _ in rows], axis=0)
    recall = np.mean([r for _, r in rows], axis=0)
    return [(r, float(precision[r]), float(recall[r])) for r in range(k + 1)]


@dataclass
class RetrievalResult:
    """One direction's retrieval quality summary."""

    map: float
    skipped_queries: int
    precision_at: List[Tuple[int, float]]
    pr_curve: List[Tuple[int, float, float]]


def evaluate(
    query: HashCodeMatrix,
    db: HashCodeMatrix,
    relevance: np.ndarray,
    p_at: Sequence[int] = (),
    top_r: Optional[int] = None,
    threads: Optional[int] = None,
) -> RetrievalResult:
    """MAP, precision at each requested cutoff, and the radius PR curve."""
    map_value, skipped = mean_average_precision(query, db, relevance, top_r, threads)
    precisions = [(int(n), precision_at_n(query, db, relevance, int(n), threads)) for n in p_at]
    curve = pr_by_radius(query, db, relevance, threads)
    return RetrievalResult(
        map=map_value,
        skipped_queries=skipped,
        precision_at=precisions,
        pr_curve=curve,
    )


def result_to_dict(result: RetrievalResult) -> dict:
    """Plain JSON-ready mapping of a retrieval result."""
    return {
        "map": result.map,
        "skipped_queries": result.skipped_queries,
        "precision_at": [[n, p] for n, p in result.precision_at],
        "pr_curve": [[r, p, rc] for r, p, rc in result.pr_curve],
    }


_ENCODERS = {
    "lab": lambda m: (m.labnet, m.c, "labels"),
    "img": lambda m: (m.imgnet, m.d_v, "image features"),
    "txt": lambda m: (m.txtnet, m.d_t, "text features"),
}


def encode(models: Models, modality: str, inputs: np.ndarray) -> HashCodeMatrix:
    """Hash a batch of inputs with the chosen generator network.

    The real-valued hash output is binarized with sign(0) = +1.
    """
    if modality not in _ENCODERS:
        raise ContractError(
            f"unknown modality {modality!r}; expected one of {sorted(_ENCODERS)}"
        )
    net, width, what = _ENCODERS[modality](models)
    arr = np.asarray(inputs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(f"{what} must be (m, {width}), got shape {arr.shape}")
    signs = np.empty((arr.shape[0], models.k))
    for lo in range(0, arr.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, arr.shape[0])
        out = net.forward(nd.Tape(), arr[lo:hi], trainable=False)
        signs[lo:hi] = binarize(out.hash_real.value)
    return HashCodeMatrix.from_signs(signs)


def save_codes(codes: HashCodeMatrix, path) -> None:
    """Write codes in the little-endian XMHC binary layout."""
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI", CODES_MAGIC, CODES_VERSION))
        f.write(struct.pack("<II", codes.n, codes.n_bits))
        f.write(codes.packed.tobytes(order="C"))


def load_codes(path) -> HashCodeMatrix:
    """Read an XMHC file back into a HashCodeMatrix."""
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8:
            raise FormatError("codes file truncated while reading header")
        magic, version = struct.unpack("<4sI", header)
        if magic != CODES_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {CODES_MAGIC!r}")
        if version != CODES_VERSION:
            raise FormatError(f"unsupported codes version {version}")
        dims = f.read(8)
        if len(dims) != 8:
            raise FormatError("codes file truncated while reading dimensions")
        m, k = struct.unpack("<II", dims)
        if m < 1 or k < 1:
            raise FormatError(f"invalid code dimensions m={m}, k={k}")
        row_bytes = (k + 7) // 8
        body = f.read(m * row_bytes)
        if len(body) != m * row_bytes:
            raise FormatError("codes file truncated while reading code rows")
        if f.read(1):
            raise FormatError("trailing bytes after code rows")
    packed = np.frombuffer(body, dtype=np.uint8).reshape(m, row_bytes)
    return HashCodeMatrix(n_bits=k, packed=packed)
