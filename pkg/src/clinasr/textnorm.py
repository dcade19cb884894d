"""Transcript normalisation and CER tokenisation.

Scores from different systems are only comparable when hypothesis and
reference pass through the same deterministic cleanup.  The defaults here
fold full/half-width forms, drop punctuation, lowercase Latin letters and
remove whitespace except where it separates two Latin/digit runs.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class NormPolicy:
    strip_punctuation: bool = True
    fold_width: bool = True
    lowercase_latin: bool = True
    collapse_whitespace: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NormPolicy":
        return cls(**{k: bool(d[k]) for k in cls.__dataclass_fields__ if k in d})


DEFAULT_POLICY = NormPolicy()


def _fold_char(c: str) -> str:
    decomp = unicodedata.decomposition(c)
    if decomp.startswith(("<wide>", "<narrow>")):
        return chr(int(decomp.split()[1], 16))
    return c


def is_latin_letter(c: str) -> bool:
    # also matches FULLWIDTH LATIN ..., so unfolded text still tokenises sensibly
    return c.isalpha() and "LATIN" in unicodedata.name(c, "").split()


def _is_word_char(c: str) -> bool:
    return is_latin_letter(c) or c.isdigit()


_WS_RUN = re.compile(r"\s+")


def _collapse(text: str) -> str:
    text = text.strip()

    def repl(m):
        before, after = text[m.start() - 1], text[m.end()]
        return " " if _is_word_char(before) and _is_word_char(after) else ""

    return _WS_RUN.sub(repl, text)


def normalize_transcript(text: str, policy: NormPolicy = DEFAULT_POLICY) -> str:
    """Normalise ``text`` under ``policy``; idempotent for any fixed policy.

    >>> normalize_transcript("ＥＭＲ切除。")
    'emr切除'
    """
    chars = []
    for c in text:
        if policy.fold_width:
            c = _fold_char(c)
        if policy.strip_punctuation and unicodedata.category(c).startswith("P"):
            c = " "
        elif policy.lowercase_latin and is_latin_letter(c):
            low = c.lower()
            # a few letters lower to multi-char or non-Latin sequences; keep those as-is
            if len(low) == 1 and is_latin_letter(low):
                c = low
        chars.append(c)
    out = "".join(chars)
    if policy.collapse_whitespace:
        out = _collapse(out)
    return out


def tokenize_chars(text: str) -> list[str]:
    """Split normalised text into CER tokens.

    Every character is a token except maximal runs of Latin letters, which
    form one token each.  Whitespace separates but is never a token.

    >>> tokenize_chars("bbps评分3分")
    ['bbps', '评', '分', '3', '分']
    """
    tokens: list[str] = []
    run: list[str] = []
    for c in text:
        if is_latin_letter(c):
            run.append(c)
            continue
        if run:
            tokens.append("".join(run))
            run = []
        if not c.isspace():
            tokens.append(c)
    if run:
        tokens.append("".join(run))
    return tokens


def detokenize(tokens: list[str]) -> str:
    """Join tokens so that re-tokenising the normalised result gives them back."""
    return " ".join(tokens)
