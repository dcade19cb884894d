"""Manifests, synthetic speech corpora, noise augmentation and dataset checks.

A manifest is a JSON-lines file: one header object carrying the
normalisation policy and provenance, then one object per utterance.
Audio paths are stored relative to the manifest's directory.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import shutil
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from itertools import product
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .audio import (
    AudioError,
    NoiseClip,
    SnrSchedule,
    Waveform,
    mix_at_snr,
    read_wav,
    sample_target_snr,
    signal_power_db,
    POWER_FLOOR_DB,
    write_wav,
)
from .textnorm import DEFAULT_POLICY, NormPolicy, normalize_transcript, tokenize_chars

log = logging.getLogger(__name__)

CATEGORIES = ("A", "B", "C", "D", "E", "F")
CATEGORY_NAMES = {
    "A": "PreOp",
    "B": "IntraOp",
    "C": "Lesion",
    "D": "Cancer",
    "E": "Inflammation",
    "F": "PostOp",
}
SPLITS = ("train", "val", "test")
VOICES = ("male", "female")


class ManifestError(ValueError):
    pass


class ProviderError(RuntimeError):
    pass


def derive_seed(seed: int, key: str) -> int:
    """Stable per-item seed so results do not depend on processing order."""
    digest = hashlib.sha256(f"{seed}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class UtteranceRecord:
    id: str
    audio_path: str
    reference: str
    duration_s: float
    speaker: Optional[str] = None
    center: Optional[str] = None
    category: Optional[str] = None
    snr_db: Optional[float] = None
    voice: Optional[str] = None
    split: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not d["extra"]:
            del d["extra"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UtteranceRecord":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass
class Manifest:
    records: list[UtteranceRecord]
    norm_policy: NormPolicy = DEFAULT_POLICY
    provenance: dict = field(default_factory=dict)
    root: Path = field(default_factory=Path.cwd)

    def __len__(self):
        return len(self.records)

    def audio_file(self, rec: UtteranceRecord) -> Path:
        return Path(self.root) / rec.audio_path

    def by_id(self) -> dict[str, UtteranceRecord]:
        return {r.id: r for r in self.records}


def _timestamp() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def write_manifest(m: Manifest, path) -> Path:
    """Write JSON-lines; audio paths are rewritten relative to ``path``'s directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"manifest": {"version": 1, "norm_policy": m.norm_policy.to_dict(), "provenance": m.provenance}}
    lines = [json.dumps(header, ensure_ascii=False, sort_keys=True)]
    for rec in m.records:
        d = rec.to_dict()
        d["audio_path"] = Path(os.path.relpath(m.audio_file(rec), path.parent)).as_posix()
        lines.append(json.dumps(d, ensure_ascii=False))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> Manifest:
    path = Path(path)
    policy, provenance, records = DEFAULT_POLICY, {}, []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if "manifest" in obj:
                policy = NormPolicy.from_dict(obj["manifest"].get("norm_policy", {}))
                provenance = obj["manifest"].get("provenance", {})
                continue
            try:
                records.append(UtteranceRecord.from_dict(obj))
            except TypeError as exc:
                raise ManifestError(f"{path}:{lineno}: bad record ({exc})") from exc
    if not records:
        raise ManifestError(f"{path}: manifest has no records")
    return Manifest(records, policy, provenance, path.parent.resolve())


class TtsProvider:
    """Turns text into speech. Subclasses override ``synthesize``."""

    name = "abstract"

    def synthesize(self, text: str, voice: str) -> Waveform:
        raise NotImplementedError

    def synthesize_many(self, requests: Sequence[tuple[str, str, str]], jobs: int = 1) -> list[Waveform]:
        """``requests`` are (id, text, voice); results keep request order."""
        def one(req):
            try:
                return self.synthesize(req[1], req[2])
            except Exception as exc:
                raise ProviderError(f"{self.name} failed on {req[0]!r} ({req[1]!r}): {exc}") from exc

        if jobs <= 1:
            return [one(r) for r in requests]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, requests))


class StubTtsProvider(TtsProvider):
    """Deterministic stand-in for a real TTS engine.

    Each CER token becomes a 0.15 s harmonic tone, pitch keyed by the token's
    code points and shaped by a Hann envelope, followed by a 0.05 s pause.
    Acoustically meaningless, but byte-reproducible, with speech-like gaps
    so blind SNR estimates respond to added noise.
    """

    name = "stub-tts"
    token_seconds = 0.2
    pause_seconds = 0.05
    base_f0 = {"male": 110.0, "female": 196.0}

    def __init__(self, sample_rate_hz: int = 16000, policy: NormPolicy = DEFAULT_POLICY):
        self.sample_rate_hz = sample_rate_hz
        self.policy = policy

    def synthesize(self, text: str, voice: str) -> Waveform:
        if voice not in self.base_f0:
            raise ProviderError(f"stub TTS has no voice {voice!r}")
        tokens = tokenize_chars(normalize_transcript(text, self.policy))
        if not tokens:
            raise ProviderError(f"nothing to synthesize in {text!r}")
        n = int(round((self.token_seconds - self.pause_seconds) * self.sample_rate_hz))
        pause = np.zeros(int(round(self.pause_seconds * self.sample_rate_hz)))
        t = np.arange(n) / self.sample_rate_hz
        env = np.hanning(n)
        segments = []
        for tok in tokens:
            key = sum(ord(c) for c in tok)
            f0 = self.base_f0[voice] * 2.0 ** ((key % 12) / 12.0)
            seg = np.zeros(n)
            for h in range(1, 6):
                if h * f0 < 0.45 * self.sample_rate_hz:
                    seg += np.sin(2 * np.pi * h * f0 * t + (key % 7) * h) / h
            segments += [0.25 * env * seg / np.max(np.abs(seg)), pause]
        return Waveform(np.concatenate(segments), self.sample_rate_hz)


class SubprocessTtsProvider(TtsProvider):
    """External TTS engine speaking a JSON-lines protocol on stdin/stdout.

    Requests: ``{"id", "text", "voice"}`` per line.  Replies:
    ``{"id", "wav_path"}`` per line.  A nonzero exit status is a failure.
    """

    def __init__(self, command: Sequence[str], timeout: Optional[float] = None):
        self.command = list(command)
        self.timeout = timeout
        self.name = "subprocess:" + " ".join(self.command)

    def synthesize(self, text: str, voice: str) -> Waveform:
        return self.synthesize_many([("0", text, voice)])[0]

    def synthesize_many(self, requests, jobs: int = 1) -> list[Waveform]:
        payload = "".join(
            json.dumps({"id": i, "text": t, "voice": v}, ensure_ascii=False) + "\n" for i, t, v in requests
        )
        try:
            proc = subprocess.run(
                self.command, input=payload, capture_output=True, text=True, encoding="utf-8", timeout=self.timeout
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ProviderError(f"{self.name}: {exc}") from exc
        if proc.returncode != 0:
            raise ProviderError(f"{self.name} exited with {proc.returncode}: {proc.stderr.strip()}")
        paths = {}
        for line in proc.stdout.splitlines():
            if line.strip():
                reply = json.loads(line)
                paths[reply["id"]] = reply["wav_path"]
        out = []
        for i, text, _ in requests:
            if i not in paths:
                raise ProviderError(f"{self.name} returned no audio for {i!r} ({text!r})")
            out.append(read_wav(paths[i]))
        return out


def _synthesize_records(requests, provider: TtsProvider, out_dir: Path, jobs: int) -> list[tuple[str, float]]:
    """Synthesize every (id, text, voice) into ``out_dir/audio``, all or nothing.

    Returns (relative audio path, duration) per request.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".synth-", dir=out_dir))
    try:
        waves = provider.synthesize_many(requests, jobs=jobs)
        results = []
        for (utt_id, _, _), w in zip(requests, waves):
            write_wav(w, staging / f"{utt_id}.wav")
            results.append((f"audio/{utt_id}.wav", round(w.duration_seconds, 6)))
        audio_dir = out_dir / "audio"
        audio_dir.mkdir(exist_ok=True)
        for utt_id, _, _ in requests:
            os.replace(staging / f"{utt_id}.wav", audio_dir / f"{utt_id}.wav")
        return results
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def build_synthetic_manifest(
    report_texts: Sequence[str],
    voices: Sequence[str],
    provider: TtsProvider,
    out_dir,
    jobs: int = 1,
) -> Manifest:
    """One utterance per (text, voice); audio goes to ``out_dir/audio``."""
    if not report_texts:
        raise ManifestError("no report texts given")
    if not voices:
        raise ManifestError("no voices given")
    for i, text in enumerate(report_texts):
        if not normalize_transcript(text):
            raise ManifestError(f"report text at index {i} is empty")
    requests = [
        (f"syn-{i:06d}-{voice}", text, voice) for i, text in enumerate(report_texts) for voice in voices
    ]
    try:
        made = _synthesize_records(requests, provider, Path(out_dir), jobs)
    except ProviderError as exc:
        raise ProviderError(f"synthesis aborted, no manifest written: {exc}") from exc
    records = [
        UtteranceRecord(id=i, audio_path=path, reference=text, duration_s=dur, voice=voice)
        for (i, text, voice), (path, dur) in zip(requests, made)
    ]
    provenance = {
        "tool": f"clinasr {__version__}",
        "stage": "synth",
        "provider": provider.name,
        "voices": list(voices),
        "n_texts": len(report_texts),
        "created_at": _timestamp(),
    }
    return Manifest(records, DEFAULT_POLICY, provenance, Path(out_dir).resolve())


def load_noise_bank(noise_dir) -> list[NoiseClip]:
    noise_dir = Path(noise_dir)
    if not noise_dir.is_dir():
        raise ManifestError(f"noise directory not found: {noise_dir}")
    files = sorted(noise_dir.glob("*.wav"))
    if not files:
        raise ManifestError(f"no .wav files in noise directory {noise_dir}")
    return [NoiseClip(read_wav(f), source_label=f.stem) for f in files]


def augment_with_noise(
    clean: Manifest,
    noise_bank: Sequence[NoiseClip],
    schedule: SnrSchedule,
    seed: int,
    out_dir,
    jobs: int = 1,
) -> Manifest:
    """Mix every clean utterance with a seeded noise clip at a seeded target SNR.

    Draws depend only on (seed, record id), so output is independent of
    ``jobs``.  Silent utterances are skipped with a warning; a sample-rate
    mismatch aborts the run.
    """
    if not noise_bank:
        raise ManifestError("noise bank is empty")
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)

    def one(rec: UtteranceRecord):
        target = sample_target_snr(schedule, derive_seed(seed, "snr:" + rec.id))
        pick = int(np.random.default_rng(derive_seed(seed, "noise:" + rec.id)).integers(len(noise_bank)))
        wav = read_wav(clean.audio_file(rec))
        clip = noise_bank[pick]
        if wav.sample_rate_hz != clip.waveform.sample_rate_hz:
            raise AudioError(
                f"{rec.id}: sample rate {wav.sample_rate_hz} Hz does not match noise "
                f"{clip.source_label!r} at {clip.waveform.sample_rate_hz} Hz"
            )
        if signal_power_db(wav) <= POWER_FLOOR_DB:
            return None
        mixed = mix_at_snr(wav, clip, target)
        rel = f"audio/{rec.id}.wav"
        write_wav(mixed.waveform, out_dir / rel)
        extra = dict(rec.extra, noise_source=clip.source_label, noise_gain=mixed.gain, n_clipped=mixed.n_clipped)
        return replace(rec, audio_path=rel, snr_db=target, extra=extra)

    ordered = sorted(clean.records, key=lambda r: r.id)
    if jobs <= 1:
        results = [one(r) for r in ordered]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, ordered))

    skipped = [r.id for r, res in zip(ordered, results) if res is None]
    for rid in skipped:
        log.warning("skipped silent utterance %s", rid)
    records = [r for r in results if r is not None]
    clipped = sum(r.extra["n_clipped"] > 0 for r in records)
    if clipped:
        log.warning("%d augmented utterances contain clipped samples", clipped)
    provenance = {
        "tool": f"clinasr {__version__}",
        "stage": "augment",
        "source": clean.provenance.get("stage", "unknown"),
        "seed": seed,
        "schedule": asdict(schedule),
        "noise_sources": [c.source_label for c in noise_bank],
        "skipped_silent": skipped,
        "n_clipped_utterances": int(clipped),
        "created_at": _timestamp(),
    }
    if "layout" in clean.provenance and not skipped:
        provenance["layout"] = clean.provenance["layout"]
    return Manifest(records, clean.norm_policy, provenance, out_dir.resolve())


def stratified_split(m: Manifest, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Manifest:
    """Assign train/val/test, stratified by (voice, duration quartile)."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")

    by_len = sorted(m.records, key=lambda r: (r.duration_s, r.id))
    quartile = {r.id: 4 * rank // len(by_len) for rank, r in enumerate(by_len)}
    strata: dict[tuple, list[UtteranceRecord]] = {}
    for r in m.records:
        strata.setdefault((r.voice or "", quartile[r.id]), []).append(r)

    n_splits = sum(f > 0 for f in fractions)
    if any(len(v) < n_splits for v in strata.values()):
        log.warning("a stratum is smaller than the number of splits; using a global split")
        strata = {("*", 0): list(m.records)}

    # Strata are shuffled and laid end to end; each position goes to the
    # split furthest behind its target share.  Every stratum is then split
    # in proportion and the global totals are within one of target.
    sequence = []
    for key in sorted(strata):
        members = sorted(strata[key], key=lambda r: r.id)
        rng = np.random.default_rng(derive_seed(seed, f"split:{key[0]}:{key[1]}"))
        sequence += [members[j] for j in rng.permutation(len(members))]
    assigned: dict[str, str] = {}
    taken = [0] * len(SPLITS)
    for k, rec in enumerate(sequence, 1):
        s = max(range(len(SPLITS)), key=lambda i: (fractions[i] * k - taken[i], -i))
        taken[s] += 1
        assigned[rec.id] = SPLITS[s]

    records = [replace(r, split=assigned[r.id]) for r in m.records]
    provenance = dict(m.provenance, split={"fractions": list(fractions), "seed": seed, "strata": "voice x duration quartile"})
    return Manifest(records, m.norm_policy, provenance, m.root)


@dataclass(frozen=True)
class LayoutSpec:
    """Expected stratum sizes, e.g. 5 centers x 6 categories x 10 utterances."""

    axes: tuple[str, ...]
    sizes: tuple[int, ...]
    per_cell: int

    @classmethod
    def parse(cls, text: str) -> "LayoutSpec":
        text = text.strip()
        m = re.fullmatch(r"(\d+)x(\d+)x(\d+)", text)
        if m:
            c, k, n = map(int, m.groups())
            return cls(("center", "category"), (c, k), n)
        parts = dict(p.split("=", 1) for p in text.split(",") if "=" in p)
        if "n" not in parts or len(parts) < 2:
            raise ValueError(f"unrecognised layout {text!r}; use CxKxN or axis=size,...,n=N")
        axes = tuple(k for k in parts if k != "n")
        for a in axes:
            if a not in ("speaker", "center", "category", "voice"):
                raise ValueError(f"unknown layout axis {a!r}")
        return cls(axes, tuple(int(parts[a]) for a in axes), int(parts["n"]))

    def __str__(self):
        return ",".join(f"{a}={s}" for a, s in zip(self.axes, self.sizes)) + f",n={self.per_cell}"


@dataclass
class RuleResult:
    rule: str
    passed: bool
    findings: list[str] = field(default_factory=list)


@dataclass
class ValidationReport:
    rules: list[RuleResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rules)

    def rule(self, name: str) -> RuleResult:
        return next(r for r in self.rules if r.rule == name)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "rules": [asdict(r) for r in self.rules]}


def validate_manifest(
    m: Manifest, expect: Optional[LayoutSpec | str] = None, max_duration_s: float = 3600.0
) -> ValidationReport:
    """Check ids, audio files, durations, labels and (optionally) stratum counts.

    Without ``expect`` the layout recorded in the manifest's provenance, if
    any, is checked.
    """
    rules = [RuleResult("non_empty", bool(m.records), [] if m.records else ["manifest has no records"])]

    first_seen: dict[str, int] = {}
    dupes = []
    for i, r in enumerate(m.records):
        if r.id in first_seen:
            dupes.append(f"duplicate id {r.id!r} at records {first_seen[r.id]} and {i}")
        else:
            first_seen[r.id] = i
    rules.append(RuleResult("unique_ids", not dupes, dupes))

    missing = [f"{r.id}: {m.audio_file(r)} not found" for r in m.records if not m.audio_file(r).is_file()]
    rules.append(RuleResult("audio_exists", not missing, missing))

    bad_dur = [
        f"{r.id}: duration {r.duration_s}"
        for r in m.records
        if not (isinstance(r.duration_s, (int, float)) and 0 < r.duration_s <= max_duration_s)
    ]
    rules.append(RuleResult("duration_bounds", not bad_dur, bad_dur))

    bad_labels = [f"{r.id}: category {r.category!r}" for r in m.records if r.category is not None and r.category not in CATEGORIES]
    bad_labels += [f"{r.id}: split {r.split!r}" for r in m.records if r.split is not None and r.split not in SPLITS]
    rules.append(RuleResult("labels", not bad_labels, bad_labels))

    if expect is None and m.provenance.get("layout"):
        expect = m.provenance["layout"]
    if isinstance(expect, str):
        expect = LayoutSpec.parse(expect)
    if expect is not None:
        rules.append(_check_layout(m, expect))
    return ValidationReport(rules)


def _check_layout(m: Manifest, spec: LayoutSpec) -> RuleResult:
    findings = []
    counts: dict[tuple, int] = {}
    for r in m.records:
        key = tuple(getattr(r, a) for a in spec.axes)
        counts[key] = counts.get(key, 0) + 1
    values = []
    for a, size in zip(spec.axes, spec.sizes):
        seen = sorted({getattr(r, a) for r in m.records}, key=str)
        if len(seen) != size:
            findings.append(f"axis {a}: {len(seen)} distinct values {seen}, expected {size}")
        values.append(seen)
    for key in product(*values):
        got = counts.get(key, 0)
        if got != spec.per_cell:
            cell = ", ".join(f"{a}={v}" for a, v in zip(spec.axes, key))
            findings.append(f"({cell}): {got} records, expected {spec.per_cell}")
    return RuleResult("layout", not findings, [f"expected {spec}"] * bool(findings) + findings)
