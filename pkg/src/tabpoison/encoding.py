"""Reversible frequency encoding for categorical features.

Each categorical feature gets a lookup table built from training-set
category counts. The most frequent category maps to 0 and rarer ones map
toward 1 via (c_max - c) / (c_max - 1). Categories with equal counts would
collide, so tied groups receive ascending offsets of an adaptive step
delta_r chosen one decimal order below the smallest gap between distinct
primary values. The result is bijective per feature: encoding then
reverting reproduces the original tokens cell for cell.

Tables are serialized to a JSON "book" so the exact same mapping can be
re-applied at poisoning and release time.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import CATEGORICAL, Dataset
from .errors import (
    CorruptBook,
    DataError,
    EmptyColumn,
    NotCategorical,
    TieResolutionError,
    UnknownCategory,
    UnmappableValue,
)

# Re-running tie resolution more than a few times means something is wrong
# with the offsets themselves; in practice one extra round is already rare.
MAX_TIE_ROUNDS = 8

REVERT_TOLERANCE = 1e-9


def delta_r_of(sorted_primaries) -> tuple[int, float]:
    """Adaptive offset step for a sorted list of primary values.

    Let d_min be the smallest difference between adjacent distinct values
    and p the decimal position of its first non-zero digit (0.204 -> 1,
    0.04 -> 2). The step is one order smaller: delta_r = 10**-(p + 1).
    With fewer than two distinct values there is no gap to measure and the
    step defaults to (p=1, 0.01).
    """
    vals = np.unique(np.asarray(list(sorted_primaries), dtype=np.float64))
    if len(vals) < 2:
        return 1, 0.01
    d_min = float(np.min(np.diff(vals)))
    # 1e-12 slack keeps float noise like 0.09999999999999998 in the 0.1 bucket
    p = max(0, int(math.ceil(-math.log10(d_min) - 1e-12)))
    return p, 10.0 ** -(p + 1)


@dataclass(frozen=True)
class EncodingEntry:
    category: str
    count: int
    primary: float
    final: float


@dataclass
class EncodingTable:
    """Per-feature category table with forward and reverse lookups."""

    feature: str
    p: int
    delta_r: float
    entries: list[EncodingEntry]
    forward: dict[str, float] = field(init=False, repr=False)
    reverse: dict[float, str] = field(init=False, repr=False)
    _keys: np.ndarray = field(init=False, repr=False)
    _cats_by_key: list[str] = field(init=False, repr=False)

    def __post_init__(self):
        self.forward = {e.category: e.final for e in self.entries}
        self.reverse = {e.final: e.category for e in self.entries}
        if len(self.forward) != len(self.entries) or len(self.reverse) != len(self.entries):
            raise TieResolutionError(
                f"feature {self.feature!r}: encoding table is not bijective"
            )
        order = np.argsort([e.final for e in self.entries], kind="stable")
        self._keys = np.asarray([self.entries[i].final for i in order], dtype=np.float64)
        self._cats_by_key = [self.entries[i].category for i in order]

    @property
    def keys(self) -> np.ndarray:
        """Valid encoded values, ascending."""
        return self._keys

    def encode_value(self, category: str) -> float:
        try:
            return self.forward[category]
        except KeyError:
            raise UnknownCategory(self.feature, category) from None

    def decode_value(self, value: float) -> str:
        """Map an encoded value back to its category.

        Exact match first, then nearest key within the revert tolerance.
        """
        cat = self.reverse.get(value)
        if cat is not None:
            return cat
        i = self._nearest_index(value)
        if abs(self._keys[i] - value) <= REVERT_TOLERANCE:
            return self._cats_by_key[i]
        raise UnmappableValue(self.feature, value)

    def snap(self, value: float) -> float:
        """Nearest valid encoded value; exact ties go to the smaller key."""
        return float(self._keys[self._nearest_index(value)])

    def _nearest_index(self, value: float) -> int:
        pos = int(np.searchsorted(self._keys, value))
        if pos == 0:
            return 0
        if pos == len(self._keys):
            return len(self._keys) - 1
        left, right = self._keys[pos - 1], self._keys[pos]
        return pos - 1 if value - left <= right - value else pos

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "p": self.p,
            "delta_r": self.delta_r,
            "entries": [
                {
                    "category": e.category,
                    "count": e.count,
                    "primary": e.primary,
                    "final": e.final,
                }
                for e in self.entries
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "EncodingTable":
        return EncodingTable(
            feature=str(d["feature"]),
            p=int(d["p"]),
            delta_r=float(d["delta_r"]),
            entries=[
                EncodingEntry(
                    category=str(e["category"]),
                    count=int(e["count"]),
                    primary=float(e["primary"]),
                    final=float(e["final"]),
                )
                for e in d["entries"]
            ],
        )


def _fit_feature(feature: str, counts: dict[str, int]) -> EncodingTable:
    """Build one feature table from category counts."""
    if not counts:
        raise EmptyColumn(f"feature {feature!r} has no categories")
    c_max = max(counts.values())
    if c_max > 1:
        primaries = {cat: (c_max - c) / (c_max - 1) for cat, c in counts.items()}
    else:
        # every category occurs once: no frequency signal, treat the whole
        # column as one tied group at 0 and let the offsets separate it
        primaries = {cat: 0.0 for cat in counts}

    p_rec, dr_rec = delta_r_of(sorted(set(primaries.values())))
    finals = dict(primaries)
    for round_no in range(MAX_TIE_ROUNDS):
        groups: dict[float, list[str]] = {}
        for cat, v in finals.items():
            groups.setdefault(v, []).append(cat)
        tied = {v: cats for v, cats in groups.items() if len(cats) > 1}
        if not tied:
            break
        if round_no == 0:
            dr = dr_rec
        else:
            # offsets collided with an existing value: re-derive the step
            # from the current value set and resolve again
            _, dr = delta_r_of(sorted(groups.keys()))
        for v, cats in tied.items():
            for k, cat in enumerate(sorted(cats), start=1):
                finals[cat] = v + (k - 1) * dr
    else:
        raise TieResolutionError(
            f"feature {feature!r}: ties unresolved after {MAX_TIE_ROUNDS} rounds"
        )

    entries = [
        EncodingEntry(category=cat, count=counts[cat], primary=primaries[cat], final=finals[cat])
        for cat in sorted(counts)
    ]
    return EncodingTable(feature=feature, p=p_rec, delta_r=dr_rec, entries=entries)


@dataclass
class EncodingBook:
    """All per-feature tables plus a fingerprint of the dataset they came from."""

    tables: dict[str, EncodingTable]
    source_fingerprint: str

    def table(self, feature: str) -> EncodingTable:
        try:
            return self.tables[feature]
        except KeyError:
            raise NotCategorical(f"no encoding table for feature {feature!r}") from None


def fit(ds: Dataset) -> EncodingBook:
    """Fit encoding tables for every categorical feature of a raw dataset."""
    if ds.n_rows == 0:
        raise EmptyColumn("cannot fit an encoding on an empty dataset")
    if ds.encoded:
        raise DataError("dataset is already encoded")
    tables = {}
    for j in ds.schema.categorical_indices():
        name = ds.schema.feature_names[j]
        col = ds.columns[j]
        cats, counts = np.unique(col.astype(str), return_counts=True)
        tables[name] = _fit_feature(name, dict(zip(cats.tolist(), counts.tolist())))
    return EncodingBook(tables=tables, source_fingerprint=ds.fingerprint())


def conv(ds: Dataset, book: EncodingBook) -> Dataset:
    """Encode a raw dataset: categorical tokens -> table values.

    Numerical columns and labels pass through untouched. Unknown category
    tokens raise.
    """
    if ds.encoded:
        raise DataError("dataset is already encoded")
    new_cols = []
    for j, name in enumerate(ds.schema.feature_names):
        col = ds.columns[j]
        if ds.schema.kinds[j] != CATEGORICAL:
            new_cols.append(np.asarray(col, dtype=np.float64).copy())
            continue
        table = book.table(name)
        tokens = col.astype(str)
        uniq, inverse = np.unique(tokens, return_inverse=True)
        mapped = np.empty(len(uniq), dtype=np.float64)
        for u, tok in enumerate(uniq.tolist()):
            mapped[u] = table.encode_value(tok)
        new_cols.append(mapped[inverse])
    return ds.replace_columns(new_cols, encoded=True)


def revert(ds: Dataset, book: EncodingBook) -> Dataset:
    """Decode an encoded dataset back to category tokens.

    Values must sit within the revert tolerance of a table key; anything
    else raises UnmappableValue rather than guessing.
    """
    if not ds.encoded:
        raise DataError("dataset is not encoded")
    new_cols = []
    for j, name in enumerate(ds.schema.feature_names):
        col = np.asarray(ds.columns[j], dtype=np.float64)
        if ds.schema.kinds[j] != CATEGORICAL:
            new_cols.append(col.copy())
            continue
        table = book.table(name)
        uniq, inverse = np.unique(col, return_inverse=True)
        decoded = np.empty(len(uniq), dtype=object)
        for u, v in enumerate(uniq.tolist()):
            decoded[u] = table.decode_value(v)
        new_cols.append(decoded[inverse])
    return ds.replace_columns(new_cols, encoded=False)


def snap_to_valid(value: float, table: EncodingTable) -> float:
    """Snap an arbitrary real to the nearest valid encoded value."""
    return table.snap(float(value))


# --- book serialization -----------------------------------------------------

BOOK_FORMAT = "tabpoison-book/1"


def _book_payload(book: EncodingBook) -> dict:
    return {
        "format": BOOK_FORMAT,
        "source_fingerprint": book.source_fingerprint,
        "tables": [book.tables[name].to_dict() for name in sorted(book.tables)],
    }


def _payload_checksum(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def save_book(book: EncodingBook, path: str) -> None:
    """Write the book as JSON. Floats use shortest round-trip repr, so a
    save/load cycle reproduces every double bit for bit."""
    payload = _book_payload(book)
    payload["checksum"] = _payload_checksum({k: payload[k] for k in ("format", "source_fingerprint", "tables")})
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_book(path: str) -> EncodingBook:
    """Read a book and verify checksum and per-feature bijectivity."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorruptBook(f"{path}: not valid JSON ({exc})") from None
    if payload.get("format") != BOOK_FORMAT:
        raise CorruptBook(f"{path}: unsupported format {payload.get('format')!r}")
    body = {k: payload.get(k) for k in ("format", "source_fingerprint", "tables")}
    if payload.get("checksum") != _payload_checksum(body):
        raise CorruptBook(f"{path}: checksum mismatch")
    tables = {}
    try:
        for td in payload["tables"]:
            table = EncodingTable.from_dict(td)  # re-validates bijectivity
            tables[table.feature] = table
    except TieResolutionError as exc:
        raise CorruptBook(f"{path}: {exc}") from None
    return EncodingBook(tables=tables, source_fingerprint=str(payload["source_fingerprint"]))
