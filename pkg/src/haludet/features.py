"""Token-level feature records and their on-disk interchange format.

A record holds, for one generated answer, the per-token log-likelihoods,
next-token entropies, and hidden-state embeddings, zero-padded to a fixed
length. Padding is derived from ``true_len``; masks are never stored.

File format ("HFJ v1"): one JSON header line followed by one JSON record per
line. Only the first ``true_len`` positions are serialized; padding is
reconstructed on load. All floats are written as shortest round-trip decimal
text of their float32 value, so save -> load is bit-exact.

    {"format":"hfj","version":1,"l_max":50,"d_emb":8}
    {"id":"q1","context_present":true,"true_len":2,"label":0,
     "ll":[-0.5,-0.25],"ent":[0.1,0.2],"emb":[[...8 floats...],[...]]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

FORMAT_NAME = "hfj"
FORMAT_VERSION = 1
DEFAULT_L_MAX = 50


class DatasetError(ValueError):
    """Malformed feature file or record-invariant violation."""


@dataclass
class FeatureRecord:
    """One QA instance: padded per-token uncertainty features plus its label."""

    id: str
    context_present: bool
    true_len: int
    log_likelihoods: np.ndarray  # (l_max,) float32, <= 0 inside true_len, 0 beyond
    entropies: np.ndarray        # (l_max,) float32, >= 0 inside true_len, 0 beyond
    embeddings: np.ndarray       # (l_max, d_emb) float32, zero rows beyond true_len
    label: int                   # 1 = hallucinatory, 0 = faithful

    @property
    def l_max(self) -> int:
        return self.log_likelihoods.shape[0]

    @property
    def d_emb(self) -> int:
        return self.embeddings.shape[1]

    def mask(self) -> np.ndarray:
        """Boolean validity mask derived from true_len, never stored."""
        return np.arange(self.l_max) < self.true_len

    def validate(self) -> None:
        rid = self.id
        n, l_max = self.true_len, self.l_max
        if not isinstance(rid, str) or not rid:
            raise DatasetError("record with empty id")
        if not (1 <= n <= l_max):
            raise DatasetError(f"record {rid!r}: true_len {n} outside [1, {l_max}]")
        if self.label not in (0, 1):
            raise DatasetError(f"record {rid!r}: label must be 0 or 1")
        if self.entropies.shape != (l_max,) or self.embeddings.shape[0] != l_max:
            raise DatasetError(f"record {rid!r}: field lengths disagree with l_max {l_max}")
        for name, arr in (("ll", self.log_likelihoods), ("ent", self.entropies),
                          ("emb", self.embeddings)):
            if not np.isfinite(arr).all():
                raise DatasetError(f"record {rid!r}: non-finite value in {name}")
        if (self.log_likelihoods[:n] > 0).any():
            t = int(np.argmax(self.log_likelihoods[:n] > 0))
            raise DatasetError(f"record {rid!r}: positive log-likelihood at position {t}")
        if (self.entropies[:n] < 0).any():
            t = int(np.argmax(self.entropies[:n] < 0))
            raise DatasetError(f"record {rid!r}: negative entropy at position {t}")
        if (self.log_likelihoods[n:] != 0).any() or (self.entropies[n:] != 0).any() \
                or (self.embeddings[n:] != 0).any():
            raise DatasetError(f"record {rid!r}: nonzero value in padded positions (>= {n})")


@dataclass
class Dataset:
    """Ordered collection of records sharing one d_emb and one l_max."""

    records: list[FeatureRecord]
    d_emb: int
    l_max: int = DEFAULT_L_MAX

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.records[i] for i in indices], self.d_emb, self.l_max)

    def validate(self) -> None:
        seen = set()
        for rec in self.records:
            rec.validate()
            if rec.l_max != self.l_max:
                raise DatasetError(f"record {rec.id!r}: l_max {rec.l_max} != dataset {self.l_max}")
            if rec.d_emb != self.d_emb:
                raise DatasetError(f"record {rec.id!r}: d_emb {rec.d_emb} != dataset {self.d_emb}")
            if rec.id in seen:
                raise DatasetError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)


def truncate_or_pad(ll, ent, emb, l_max: int):
    """Fit raw per-token features to length l_max.

    Shorter sequences are zero-padded; sequences longer than l_max keep their
    first l_max tokens (short-form QA carries the answer head early). Returns
    ((ll, ent, emb), true_len) with float32 arrays of padded shape.
    """
    ll = np.asarray(ll, dtype=np.float32).reshape(-1)
    ent = np.asarray(ent, dtype=np.float32).reshape(-1)
    emb = np.asarray(emb, dtype=np.float32)
    n = ll.shape[0]
    if n == 0:
        raise DatasetError("truncate_or_pad: empty sequence")
    if ent.shape[0] != n or emb.shape[0] != n:
        raise DatasetError(f"truncate_or_pad: lengths disagree ({n}, {ent.shape[0]}, {emb.shape[0]})")
    if emb.ndim != 2:
        raise DatasetError("truncate_or_pad: emb must be 2-D")
    true_len = min(n, l_max)
    out_ll = np.zeros(l_max, dtype=np.float32)
    out_ent = np.zeros(l_max, dtype=np.float32)
    out_emb = np.zeros((l_max, emb.shape[1]), dtype=np.float32)
    out_ll[:true_len] = ll[:true_len]
    out_ent[:true_len] = ent[:true_len]
    out_emb[:true_len] = emb[:true_len]
    return (out_ll, out_ent, out_emb), true_len


def _floats(values) -> list[float]:
    # float32 -> float64 is exact, so json's shortest repr round-trips the
    # float32 bit pattern through text
    return [float(np.float32(v)) for v in values]


def save_dataset(ds: Dataset, path) -> None:
    """Write an HFJ v1 file. load_dataset(save_dataset(ds)) == ds bit-exactly."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        header = {"format": FORMAT_NAME, "version": FORMAT_VERSION,
                  "l_max": ds.l_max, "d_emb": ds.d_emb}
        f.write(json.dumps(header, separators=(",", ":")) + "\n")
        for rec in ds.records:
            n = rec.true_len
            row = {
                "id": rec.id,
                "context_present": bool(rec.context_present),
                "true_len": n,
                "label": int(rec.label),
                "ll": _floats(rec.log_likelihoods[:n]),
                "ent": _floats(rec.entropies[:n]),
                "emb": [_floats(row) for row in rec.embeddings[:n]],
            }
            f.write(json.dumps(row, separators=(",", ":")) + "\n")


def _field(obj: dict, name: str, lineno: int):
    if name not in obj:
        raise DatasetError(f"line {lineno}: missing field {name!r}")
    return obj[name]


def load_dataset(path) -> Dataset:
    """Read and validate an HFJ v1 file, preserving record order."""
    records: list[FeatureRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        header_line = f.readline()
        if not header_line.strip():
            raise DatasetError("line 1: missing header")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise DatasetError(f"line 1: invalid JSON header ({e.msg})") from e
        if _field(header, "format", 1) != FORMAT_NAME:
            raise DatasetError(f"line 1: field 'format' is not {FORMAT_NAME!r}")
        if _field(header, "version", 1) != FORMAT_VERSION:
            raise DatasetError(f"line 1: unsupported version {header['version']!r}")
        l_max = _field(header, "l_max", 1)
        d_emb = _field(header, "d_emb", 1)
        if not (isinstance(l_max, int) and l_max >= 1):
            raise DatasetError("line 1: field 'l_max' must be a positive integer")
        if not (isinstance(d_emb, int) and d_emb >= 1):
            raise DatasetError("line 1: field 'd_emb' must be a positive integer")

        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"line {lineno}: invalid JSON ({e.msg})") from e
            rid = _field(row, "id", lineno)
            n = _field(row, "true_len", lineno)
            if not (isinstance(n, int) and n >= 1):
                raise DatasetError(f"line {lineno}: field 'true_len' must be a positive integer")
            ll = _field(row, "ll", lineno)
            ent = _field(row, "ent", lineno)
            emb = _field(row, "emb", lineno)
            label = _field(row, "label", lineno)
            cp = _field(row, "context_present", lineno)
            if not isinstance(cp, bool):
                raise DatasetError(f"line {lineno}: field 'context_present' must be a boolean")
            if len(ll) != n or len(ent) != n or len(emb) != n:
                raise DatasetError(f"line {lineno}: field lengths disagree with true_len {n}")
            if n > l_max:
                raise DatasetError(f"line {lineno}: field 'true_len' exceeds l_max {l_max}")
            if any(len(r) != d_emb for r in emb):
                raise DatasetError(f"line {lineno}: field 'emb' rows must have d_emb {d_emb} entries")
            rec_ll = np.zeros(l_max, dtype=np.float32)
            rec_ent = np.zeros(l_max, dtype=np.float32)
            rec_emb = np.zeros((l_max, d_emb), dtype=np.float32)
            try:
                rec_ll[:n] = np.asarray(ll, dtype=np.float32)
                rec_ent[:n] = np.asarray(ent, dtype=np.float32)
                rec_emb[:n] = np.asarray(emb, dtype=np.float32)
            except (TypeError, ValueError) as e:
                raise DatasetError(f"line {lineno}: non-numeric feature value ({e})") from e
            records.append(FeatureRecord(
                id=rid, context_present=cp, true_len=n,
                log_likelihoods=rec_ll, entropies=rec_ent, embeddings=rec_emb,
                label=label,
            ))
    ds = Dataset(records, d_emb=d_emb, l_max=l_max)
    ds.validate()
    return ds
