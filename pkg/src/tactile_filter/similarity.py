"""Hole-peg and peg-peg similarity scorers and the contrastive loss."""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .bank import PegImageBank, quantize


class SimilarityModel:
    """Scorer interface.  ``score_hp`` and ``score_pp`` return values in (0, 1].

    Batched methods take a bank and row indices; subclasses override them when
    they can do better than scoring patch by patch.
    """

    def score_hp(self, hole: np.ndarray, peg: np.ndarray) -> float:
        raise NotImplementedError

    def score_pp(self, a: np.ndarray, b: np.ndarray) -> float:
        raise NotImplementedError

    def hp_scores(self, hole: np.ndarray, bank: PegImageBank, idx=None) -> np.ndarray:
        idx = np.arange(bank.n_entries) if idx is None else np.asarray(idx)
        return np.array([self.score_hp(hole, bank.patches[i]) for i in idx])

    def pp_scores(self, bank: PegImageBank, ia, ib) -> np.ndarray:
        ia, ib = np.broadcast_arrays(np.asarray(ia), np.asarray(ib))
        out = np.empty(ia.shape)
        for k in np.ndindex(ia.shape):
            out[k] = self.score_pp(bank.patches[ia[k]], bank.patches[ib[k]])
        return out


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"patch shape mismatch: {np.shape(a)} vs {np.shape(b)}")


@dataclass(frozen=True)
class GeometricOracle(SimilarityModel):
    """Contact-patch agreement raised to ``sharpness`` and floored at ``epsilon``.

    Hole-peg agreement compares the hole with the peg's complement (plate minus
    peg), so an exactly mating pair scores 1.
    """

    epsilon: float = 1e-6
    sharpness: float = 8.0

    def __post_init__(self):
        if not 0 < self.epsilon <= 0.01:
            raise ValueError("epsilon must lie in (0, 0.01]")
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")

    def from_l1(self, l1, n_cells: int):
        agreement = np.clip(1.0 - np.asarray(l1, dtype=np.float64) / n_cells, 0.0, 1.0)
        return np.maximum(self.epsilon, agreement**self.sharpness)

    def score_hp(self, hole, peg, plate=None) -> float:
        _check_pair(hole, peg)
        hole = np.asarray(hole, dtype=np.float64)
        comp = (1.0 if plate is None else np.asarray(plate, dtype=np.float64)) - np.asarray(peg, dtype=np.float64)
        comp = np.clip(comp, 0.0, 1.0)
        return float(self.from_l1(np.abs(hole - comp).sum(), hole.size))

    def score_pp(self, a, b) -> float:
        _check_pair(a, b)
        l1 = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).sum()
        return float(self.from_l1(l1, np.size(a)))

    def hp_scores(self, hole, bank: PegImageBank, idx=None) -> np.ndarray:
        hole = np.asarray(hole, dtype=np.float32)
        _check_pair(hole, bank.patches[0])
        n = hole.size
        q = quantize(hole, bank.levels) if bank.plates is None else None
        packed = bank.packed if q is not None else None
        if packed is not None:
            matches = bank.mating_agreement_units(q, idx)
            if idx is None:
                matches = matches[: bank.n_entries]
            l1 = (bank.levels * n - matches) / bank.levels
        else:
            idx = np.arange(bank.n_entries) if idx is None else np.asarray(idx)
            flat = hole.ravel().astype(np.float64)
            l1 = np.empty(len(idx))
            for s in range(0, len(idx), 1024):
                comp = bank.complement(idx[s : s + 1024]).astype(np.float64)
                l1[s : s + 1024] = np.abs(comp - flat).sum(axis=1)
        return self.from_l1(l1, n)

    def pp_scores(self, bank: PegImageBank, ia, ib) -> np.ndarray:
        units = bank.pair_l1_units(ia, ib)
        if units is None:
            return self.from_l1(bank.pair_l1(ia, ib), bank.window.n_cells)
        return _score_table(self, bank.window.n_cells, bank.levels)[units]


@lru_cache(maxsize=32)
def _score_table(oracle: GeometricOracle, n_cells: int, levels: int) -> np.ndarray:
    """Oracle score for every integer ``L1 * levels`` value."""
    return oracle.from_l1(np.arange(n_cells * levels + 1) / levels, n_cells)


@dataclass(frozen=True)
class ScaledModel(SimilarityModel):
    """Multiplies another model's peg-peg scores by a positive constant."""

    base: SimilarityModel
    factor: float

    def score_hp(self, hole, peg):
        return self.base.score_hp(hole, peg)

    def score_pp(self, a, b):
        return self.factor * self.base.score_pp(a, b)

    def hp_scores(self, hole, bank, idx=None):
        return self.base.hp_scores(hole, bank, idx)

    def pp_scores(self, bank, ia, ib):
        return self.factor * self.base.pp_scores(bank, ia, ib)


# -- embeddings ----------------------------------------------------------------

def _unit(v, name="vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError(f"{name} is zero")
    return v / n


def embed_score(q, k, tau: float) -> float:
    """``exp((q . k - 1) / tau)`` for unit vectors: 1 when ``q == k``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    q, k = _unit(q, "query"), _unit(k, "key")
    return float(np.exp((np.dot(q, k) - 1.0) / tau))


def info_nce_loss(q, k_pos, k_negs: Sequence, tau: float) -> float:
    """Contrastive loss of a query against one positive and a set of negative keys."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    k_negs = np.atleast_2d(np.asarray(k_negs, dtype=np.float64))
    if k_negs.size == 0:
        raise ValueError("need at least one negative key")
    q = np.asarray(q, dtype=np.float64)
    pos = np.dot(q, k_pos) / tau
    logits = np.concatenate([[pos], k_negs @ q / tau])
    return float(logsumexp(logits) - pos)


@dataclass(eq=False)
class EmbeddingTable:
    """Unit vectors keyed by bank index, with a softmax temperature."""

    vectors: np.ndarray  # (count, dimension)
    tau: float
    keys: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.vectors) == 0:
            raise ValueError("embedding table needs a non-empty (count, dimension) array")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding table has non-finite entries")
        norms = np.linalg.norm(self.vectors, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-5)
        if len(bad):
            raise ValueError(f"vector {bad[0]} has norm {norms[bad[0]]:.6f}, expected unit norm")
        self.keys = np.arange(len(self.vectors)) if self.keys is None else np.asarray(self.keys, dtype=np.int64)
        if len(self.keys) != len(self.vectors) or len(np.unique(self.keys)) != len(self.keys):
            raise ValueError("embedding keys must be unique, one per vector")
        self._row = {int(k): i for i, k in enumerate(self.keys)}

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.vectors)

    def vector(self, key: int) -> np.ndarray:
        return self.vectors[self._row[int(key)]]

    def has(self, key: int) -> bool:
        return int(key) in self._row

    def save(self, path: str | Path) -> None:
        header = {"dimension": self.dimension, "tau": self.tau, "count": len(self), "keys": self.keys.tolist()}
        blob = np.ascontiguousarray(self.vectors, dtype="<f4").tobytes()
        Path(path).write_bytes(json.dumps(header).encode() + b"\n" + blob)


def load_embedding_table(path: str | Path, bank: PegImageBank | None = None) -> EmbeddingTable:
    """Read a table file: one JSON header line, then ``count * dimension`` little-endian f32."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing JSON header")
    try:
        header = json.loads(raw[:nl])
        d, count, tau = int(header["dimension"]), int(header["count"]), float(header["tau"])
    except (ValueError, KeyError) as exc:
        raise ValueError(f"{path}: malformed header ({exc})") from exc
    body = raw[nl + 1 :]
    if len(body) != 4 * d * count:
        raise ValueError(f"{path}: expected {count} x {d} f32 values, got {len(body)} bytes")
    vecs = np.frombuffer(body, dtype="<f4").reshape(count, d).astype(np.float64)
    table = EmbeddingTable(vecs, tau, header.get("keys"))
    if bank is not None:
        dangling = table.keys[(table.keys < 0) | (table.keys > bank.n_entries)]
        if len(dangling):
            raise ValueError(f"{path}: key {dangling[0]} is not a bank index")
    return table


def patch_digest(patch: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(patch, dtype="<f4").tobytes()).hexdigest()


class TableEncoder:
    """Maps a bank patch to its stored embedding by exact patch content."""

    def __init__(self, table: EmbeddingTable, bank: PegImageBank):
        self.table = table
        self.bank = bank
        self._by_digest: dict[str, int] = {}
        self.lut = np.zeros((bank.n_entries + 1, table.dimension))
        for i in range(bank.n_entries + 1):
            if table.has(i):
                self._by_digest.setdefault(patch_digest(bank.patches[i]), i)
                self.lut[i] = table.vector(i)

    def key_of(self, patch: np.ndarray) -> int:
        try:
            return self._by_digest[patch_digest(patch)]
        except KeyError:
            raise KeyError("patch has no entry in the embedding table") from None

    def __call__(self, patch: np.ndarray) -> np.ndarray:
        return self.table.vector(self.key_of(patch))


class EmbeddingModel(SimilarityModel):
    """Scores through encoders: ``exp((q . k - 1) / tau)``.

    ``query_encoder`` embeds hole patches, ``key_encoder`` embeds peg patches.
    When ``key_encoder`` is a :class:`TableEncoder`, peg-peg scoring by bank
    index reads vectors directly; the no-contact row, if absent from the table,
    is treated as orthogonal to everything but itself.
    """

    def __init__(self, query_encoder: Callable, key_encoder: Callable, tau: float):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.query_encoder = query_encoder
        self.key_encoder = key_encoder
        self.tau = tau

    def score_hp(self, hole, peg):
        return embed_score(self.query_encoder(hole), self.key_encoder(peg), self.tau)

    def score_pp(self, a, b):
        return embed_score(self.key_encoder(a), self.key_encoder(b), self.tau)

    def hp_scores(self, hole, bank, idx=None):
        idx = np.arange(bank.n_entries) if idx is None else np.asarray(idx)
        q = _unit(self.query_encoder(hole), "query")
        keys = np.stack([self._key_vector(bank, i) for i in idx])
        return np.exp((keys @ q - 1.0) / self.tau)

    def _key_vector(self, bank, i):
        enc = self.key_encoder
        if isinstance(enc, TableEncoder) and enc.table.has(i):
            return enc.table.vector(i)
        return _unit(enc(bank.patches[i]), "key")

    def pp_scores(self, bank, ia, ib):
        enc = self.key_encoder
        if not isinstance(enc, TableEncoder):
            return super().pp_scores(bank, ia, ib)
        ia, ib = np.broadcast_arrays(np.asarray(ia), np.asarray(ib))
        nc = bank.no_contact_index
        dots = np.einsum("...d,...d->...", enc.lut[ia], enc.lut[ib])
        if not enc.table.has(nc):
            dots = np.where((ia == nc) & (ib == nc), 1.0, dots)
        return np.exp((dots - 1.0) / self.tau)
