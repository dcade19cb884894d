"""Transcription quality metrics: CER, BLEU-1, BERTScore-F1, Med ACC and RTF."""

from __future__ import annotations

import hashlib
import math
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .textnorm import DEFAULT_POLICY, NormPolicy, normalize_transcript, tokenize_chars

TERM_CATEGORIES = ("anatomy", "morphology", "procedure", "context", "quality", "size")


class MetricError(ValueError):
    pass


@dataclass
class UtteranceScore:
    cer: float
    bleu1: float
    n_ref_tokens: int
    n_terms_in_ref: int
    med_acc: Optional[float] = None
    bertscore_f1: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "cer": self.cer,
            "bleu1": self.bleu1,
            "bertscore_f1": self.bertscore_f1,
            "med_acc": self.med_acc,
            "n_ref_tokens": self.n_ref_tokens,
            "n_terms_in_ref": self.n_terms_in_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UtteranceScore":
        return cls(
            cer=d["cer"],
            bleu1=d["bleu1"],
            n_ref_tokens=d["n_ref_tokens"],
            n_terms_in_ref=d["n_terms_in_ref"],
            med_acc=d.get("med_acc"),
            bertscore_f1=d.get("bertscore_f1"),
        )


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Unit-cost Levenshtein distance between two token sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def _ref_tokens(ref: str, policy: NormPolicy) -> list[str]:
    toks = tokenize_chars(normalize_transcript(ref, policy))
    if not toks:
        raise MetricError(f"reference is empty after normalisation: {ref!r}")
    return toks


def cer(hyp: str, ref: str, policy: NormPolicy = DEFAULT_POLICY) -> float:
    r = _ref_tokens(ref, policy)
    h = tokenize_chars(normalize_transcript(hyp, policy))
    return edit_distance(h, r) / len(r)


def bleu1(hyp: str, ref: str, policy: NormPolicy = DEFAULT_POLICY) -> float:
    """Clipped unigram precision times the brevity penalty."""
    r = _ref_tokens(ref, policy)
    h = tokenize_chars(normalize_transcript(hyp, policy))
    if not h:
        return 0.0
    ref_counts = Counter(r)
    clipped = sum(min(c, ref_counts[t]) for t, c in Counter(h).items())
    bp = min(1.0, math.exp(1.0 - len(r) / len(h)))
    return clipped / len(h) * bp


@dataclass
class TermLexicon:
    """Curated medical terms (already normalised) with an optional category each."""

    terms: dict[str, Optional[str]] = field(default_factory=dict)
    policy: NormPolicy = DEFAULT_POLICY

    def __post_init__(self):
        for t, cat in self.terms.items():
            if not t:
                raise MetricError("lexicon contains an empty term")
            if normalize_transcript(t, self.policy) != t:
                raise MetricError(f"lexicon term {t!r} is not normalised")
            if cat is not None and cat not in TERM_CATEGORIES:
                raise MetricError(f"term {t!r}: unknown category {cat!r}")
        ordered = sorted(self.terms, key=lambda t: (-len(t), t))
        self._pattern = re.compile("|".join(map(re.escape, ordered))) if ordered else None

    @classmethod
    def from_terms(cls, terms, policy: NormPolicy = DEFAULT_POLICY) -> "TermLexicon":
        """Build from raw (term, category) pairs, normalising each term."""
        out: dict[str, Optional[str]] = {}
        for raw, cat in terms:
            t = normalize_transcript(raw, policy)
            if t in out:
                raise MetricError(f"duplicate lexicon term {t!r}")
            out[t] = cat
        return cls(out, policy)

    def __len__(self):
        return len(self.terms)

    def find_terms(self, text: str) -> list[str]:
        """Leftmost-longest non-overlapping term occurrences in normalised ``text``."""
        if self._pattern is None:
            return []
        return self._pattern.findall(text)

    def sha256(self) -> str:
        body = "\n".join(f"{t}\t{self.terms[t] or ''}" for t in sorted(self.terms))
        return hashlib.sha256(body.encode("utf-8")).hexdigest()


def load_lexicon(path, policy: NormPolicy = DEFAULT_POLICY) -> TermLexicon:
    """UTF-8, one term per line, optional tab-separated category."""
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        term, _, cat = line.partition("\t")
        pairs.append((term.strip(), cat.strip() or None))
    return TermLexicon.from_terms(pairs, policy)


def save_lexicon(lex: TermLexicon, path) -> None:
    lines = [f"{t}\t{c}" if c else t for t, c in lex.terms.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def med_term_accuracy(
    hyp: str, ref: str, lexicon: TermLexicon, policy: NormPolicy = DEFAULT_POLICY
) -> Optional[float]:
    """Fraction of reference term instances reproduced verbatim in the hypothesis.

    A term counts as correct when its full character sequence appears in the
    hypothesis.  Matching is by substring presence, not alignment, with
    multiplicity: a term found twice in the reference needs two hypothesis
    occurrences.  Returns None when the reference holds no lexicon term.
    """
    ref_terms = Counter(lexicon.find_terms(normalize_transcript(ref, policy)))
    total = sum(ref_terms.values())
    if total == 0:
        return None
    h = normalize_transcript(hyp, policy)
    hit = sum(min(n, h.count(t)) for t, n in ref_terms.items())
    return hit / total


def _as_unit_rows(vectors, what: str) -> np.ndarray:
    m = np.asarray(vectors, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise MetricError(f"{what} embeddings must be a non-empty list of vectors")
    norms = np.linalg.norm(m, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise MetricError(f"{what} embeddings must be unit length (max deviation {np.max(np.abs(norms - 1)):.2e})")
    return m


def bertscore_f1(hyp_embeddings, ref_embeddings) -> float:
    """Greedy max-cosine matching F1 between token embeddings, no IDF weighting."""
    h = _as_unit_rows(hyp_embeddings, "hypothesis")
    r = _as_unit_rows(ref_embeddings, "reference")
    sim = h @ r.T
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    if precision + recall == 0.0:
        return 0.0  # 0/0, as the reference implementation does
    return 2 * precision * recall / (precision + recall)


def real_time_factor(audio_seconds: float, wall_seconds: float) -> float:
    if not audio_seconds > 0:
        raise MetricError(f"audio duration must be positive, got {audio_seconds}")
    if wall_seconds < 0:
        raise MetricError(f"wall time must be non-negative, got {wall_seconds}")
    return wall_seconds / audio_seconds


# Embedding-provider file.  Each record, little-endian:
#   u32 id_len | id (utf-8) | u8 role (0 = hyp, 1 = ref) | u32 n | u32 d | n*d f32
# A sidecar "<file>.idx" lists "id<TAB>role<TAB>byte offset" per record.

_ROLES = ("hyp", "ref")


def write_embeddings(path, records) -> None:
    """Write ``(utt_id, role, matrix)`` records to ``path`` plus its index."""
    path = Path(path)
    index = []
    with open(path, "wb") as f:
        for utt_id, role, mat in records:
            mat = np.asarray(mat, dtype="<f4")
            if mat.ndim != 2:
                raise MetricError(f"{utt_id}/{role}: embeddings must be 2-D")
            raw_id = utt_id.encode("utf-8")
            index.append(f"{utt_id}\t{role}\t{f.tell()}")
            f.write(struct.pack("<I", len(raw_id)) + raw_id)
            f.write(struct.pack("<BII", _ROLES.index(role), mat.shape[0], mat.shape[1]))
            f.write(mat.tobytes(order="C"))
    Path(str(path) + ".idx").write_text("\n".join(index) + "\n", encoding="utf-8")


def read_embeddings(path) -> dict[tuple[str, str], np.ndarray]:
    """Map ``(utt_id, role)`` to an (n, d) float32 array."""
    data = Path(path).read_bytes()
    out = {}
    pos = 0
    while pos < len(data):
        try:
            (id_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            utt_id = data[pos : pos + id_len].decode("utf-8")
            pos += id_len
            role, n, d = struct.unpack_from("<BII", data, pos)
            pos += 9
            count = n * d
            mat = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(n, d)
            role = _ROLES[role]
        except (struct.error, ValueError, UnicodeDecodeError, IndexError) as exc:
            raise MetricError(f"{path}: truncated or corrupt embedding record at byte {pos}") from exc
        pos += 4 * count
        out[(utt_id, role)] = mat
    return out


def read_embedding_index(path) -> list[tuple[str, str, int]]:
    rows = []
    for line in Path(str(path) + ".idx").read_text(encoding="utf-8").splitlines():
        if line:
            utt_id, role, offset = line.split("\t")
            rows.append((utt_id, role, int(offset)))
    return rows
