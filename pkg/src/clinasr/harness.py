"""Run ASR engines over a manifest, score them and build stratified reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .corpus import Manifest, UtteranceRecord
from .metrics import (
    MetricError,
    TermLexicon,
    UtteranceScore,
    bertscore_f1,
    bleu1,
    cer,
    med_term_accuracy,
    read_embeddings,
)
from .textnorm import DEFAULT_POLICY, NormPolicy, detokenize, normalize_transcript, tokenize_chars

log = logging.getLogger(__name__)

AXES = ("speaker", "center", "category")
METRICS = ("cer", "bleu1", "bertscore_f1", "med_acc")
METRIC_LABELS = {"cer": "CER", "bleu1": "BLEU-1", "bertscore_f1": "BERTScore", "med_acc": "Med ACC"}
MISSING_STRATUM = "NA"

CONVENTIONS = {
    "sd": "population (divide by N)",
    "averaging": "unweighted mean over utterances",
    "tokens": "one token per Han character, digit or symbol; Latin letter runs are one token",
    "bleu1": "clipped unigram precision x brevity penalty",
    "bertscore": "greedy max-cosine F1, no idf",
    "med_acc": "reference terms leftmost-longest; hit = verbatim substring in hypothesis; utterances without terms excluded",
    "rtf": "total wall seconds / total audio seconds",
}


class AdapterError(RuntimeError):
    pass


class RunFailed(RuntimeError):
    def __init__(self, message: str, run: "EvalRun"):
        super().__init__(message)
        self.run = run


@dataclass
class Hypothesis:
    id: str
    text: str
    wall_seconds: Optional[float] = None


@dataclass
class WorkItem:
    id: str
    wav_path: str
    record: UtteranceRecord


class TranscriberAdapter:
    """Base adapter: override ``transcribe`` (one utterance) or ``transcribe_batch``."""

    name = "abstract"

    def transcribe(self, item: WorkItem) -> tuple[str, Optional[float]]:
        raise NotImplementedError

    def transcribe_batch(self, items: Sequence[WorkItem]) -> list[Hypothesis]:
        out = []
        for item in items:
            t0 = time.perf_counter()
            text, reported = self.transcribe(item)
            elapsed = time.perf_counter() - t0
            out.append(Hypothesis(item.id, text, reported if reported is not None else elapsed))
        return out


class EchoReferenceAdapter(TranscriberAdapter):
    """Returns the reference verbatim; a perfect engine for harness self-tests."""

    name = "echo-reference"

    def transcribe(self, item):
        return item.record.reference, None


class CorruptingAdapter(TranscriberAdapter):
    """Deletes every ``every``-th normalised reference token."""

    def __init__(self, every: int = 6, policy: NormPolicy = DEFAULT_POLICY):
        if every < 1:
            raise ValueError("every must be >= 1")
        self.every = every
        self.policy = policy
        self.name = f"corrupt-delete-every-{every}"

    def transcribe(self, item):
        toks = tokenize_chars(normalize_transcript(item.record.reference, self.policy))
        kept = [t for i, t in enumerate(toks, 1) if i % self.every]
        return detokenize(kept), None


class ThrottledAdapter(TranscriberAdapter):
    """Wraps another adapter and spends ``rtf`` seconds per second of audio.

    The throttle time is reported as the utterance's processing time, the way
    an engine reports its own compute time.
    """

    def __init__(self, inner: TranscriberAdapter, rtf: float, sleep: bool = True):
        self.inner = inner
        self.rtf = rtf
        self.sleep = sleep
        self.name = f"{inner.name}+throttle-{rtf:g}"

    def transcribe(self, item):
        text, _ = self.inner.transcribe(item)
        wall = item.record.duration_s * self.rtf
        if self.sleep:
            time.sleep(wall)
        return text, wall


class SubprocessAdapter(TranscriberAdapter):
    """External engine speaking JSON lines on stdin/stdout.

    Requests ``{"id", "wav_path"}``; replies ``{"id", "text", "wall_seconds"?}``.
    One process is started per batch.  Without ``wall_seconds`` in a reply the
    batch's measured wall time is split evenly over its utterances.
    """

    def __init__(self, command: Sequence[str], timeout: Optional[float] = None):
        self.command = list(command)
        self.timeout = timeout
        self.name = "subprocess:" + " ".join(self.command)

    def transcribe_batch(self, items):
        payload = "".join(json.dumps({"id": it.id, "wav_path": it.wav_path}, ensure_ascii=False) + "\n" for it in items)
        t0 = time.perf_counter()
        try:
            proc = subprocess.run(
                self.command, input=payload, capture_output=True, text=True, encoding="utf-8", timeout=self.timeout
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterError(f"{self.name}: {exc}") from exc
        elapsed = time.perf_counter() - t0
        if proc.returncode != 0:
            raise AdapterError(f"{self.name} exited with {proc.returncode}: {proc.stderr.strip()}")
        replies = {}
        for line in proc.stdout.splitlines():
            if line.strip():
                r = json.loads(line)
                replies[r["id"]] = r
        out = []
        for it in items:
            if it.id not in replies:
                raise AdapterError(f"{self.name} returned no hypothesis for {it.id!r}")
            r = replies[it.id]
            wall = r.get("wall_seconds")
            out.append(Hypothesis(it.id, r["text"], float(wall) if wall is not None else elapsed / len(items)))
        return out


@dataclass
class UtteranceResult:
    id: str
    reference: str
    duration_s: float
    speaker: Optional[str] = None
    center: Optional[str] = None
    category: Optional[str] = None
    hypothesis: Optional[str] = None
    wall_seconds: Optional[float] = None
    score: Optional[UtteranceScore] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["score"] = self.score.to_dict() if self.score else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UtteranceResult":
        d = dict(d)
        d["score"] = UtteranceScore.from_dict(d["score"]) if d.get("score") else None
        return cls(**d)


@dataclass
class EvalRun:
    manifest: str
    adapter: str
    results: list[UtteranceResult]
    norm_policy: NormPolicy = DEFAULT_POLICY
    lexicon_sha256: Optional[str] = None
    seed: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.failures and all(r.hypothesis is not None for r in self.results)

    def header(self) -> dict:
        return {
            "manifest": self.manifest,
            "adapter": self.adapter,
            "norm_policy": self.norm_policy.to_dict(),
            "lexicon_sha256": self.lexicon_sha256,
            "seed": self.seed,
            "status": "complete" if self.complete else "failed",
            "failures": self.failures,
            "tool": f"clinasr {__version__}",
        }


def write_run(run: EvalRun, path, timing: bool = True) -> Path:
    path = Path(path)
    lines = [json.dumps({"run": run.header()}, ensure_ascii=False, sort_keys=True)]
    for r in run.results:
        d = r.to_dict()
        if not timing:
            d.pop("wall_seconds")
        lines.append(json.dumps(d, ensure_ascii=False, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_run(path) -> EvalRun:
    header, results = None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "run" in obj:
            header = obj["run"]
        else:
            results.append(UtteranceResult.from_dict(obj))
    if header is None:
        raise ValueError(f"{path}: missing run header")
    return EvalRun(
        manifest=header["manifest"],
        adapter=header["adapter"],
        results=results,
        norm_policy=NormPolicy.from_dict(header["norm_policy"]),
        lexicon_sha256=header.get("lexicon_sha256"),
        seed=header.get("seed", 0),
        failures=header.get("failures", []),
    )


def _chunks(items: list, n_chunks: int) -> list[list]:
    size = max(1, math.ceil(len(items) / n_chunks))
    return [items[i : i + size] for i in range(0, len(items), size)]


def run_transcriber(
    m: Manifest,
    adapter: TranscriberAdapter,
    parallelism: int = 1,
    seed: int = 0,
    partial_path=None,
    manifest_name: Optional[str] = None,
) -> EvalRun:
    """Transcribe every record once; results are ordered by id.

    Work is cut into batches (four per worker) and fanned out over a thread
    pool.  A failing batch fails only its own utterances; if any fail the
    partial run is written to ``partial_path`` (when given) and
    :class:`RunFailed` is raised.
    """
    records = sorted(m.records, key=lambda r: r.id)
    items = [WorkItem(r.id, str(m.audio_file(r)), r) for r in records]
    batches = _chunks(items, max(1, parallelism) * 4)

    def work(batch):
        try:
            hyps = adapter.transcribe_batch(batch)
            got = {h.id for h in hyps}
            missing = [it.id for it in batch if it.id not in got]
            if missing:
                raise AdapterError(f"{adapter.name} returned no hypothesis for {missing}")
            return hyps, None
        except Exception as exc:
            log.error("batch starting at %s failed: %s", batch[0].id, exc)
            return [], str(exc)

    if parallelism <= 1:
        outcomes = [work(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(work, batches))

    hyps: dict[str, Hypothesis] = {}
    errors: dict[str, str] = {}
    for batch, (got, err) in zip(batches, outcomes):
        if err is not None:
            errors.update({it.id: err for it in batch})
        for h in got:
            hyps[h.id] = h

    results = []
    for r in records:
        h = hyps.get(r.id)
        results.append(
            UtteranceResult(
                id=r.id,
                reference=r.reference,
                duration_s=r.duration_s,
                speaker=r.speaker,
                center=r.center,
                category=r.category,
                hypothesis=h.text if h else None,
                wall_seconds=h.wall_seconds if h else None,
                error=errors.get(r.id),
            )
        )
    run = EvalRun(
        manifest=manifest_name or str(m.provenance.get("name", "manifest")),
        adapter=adapter.name,
        results=results,
        norm_policy=m.norm_policy,
        seed=seed,
        failures=sorted(errors),
    )
    if errors:
        if partial_path is not None:
            write_run(run, partial_path)
        raise RunFailed(f"{len(errors)} of {len(records)} utterances failed", run)
    return run


def score_run(run: EvalRun, lexicon: Optional[TermLexicon] = None, embeddings=None) -> EvalRun:
    """Fill in per-utterance scores.

    ``embeddings`` is a path to an embedding-provider file or the mapping
    returned by :func:`read_embeddings`; without it BERTScore stays absent.
    """
    if not run.complete:
        raise RunFailed("cannot score a run with failed or missing hypotheses", run)
    if embeddings is not None and not isinstance(embeddings, dict):
        embeddings = read_embeddings(embeddings)
    policy = run.norm_policy
    scored = []
    for r in run.results:
        ref_norm = normalize_transcript(r.reference, policy)
        score = UtteranceScore(
            cer=cer(r.hypothesis, r.reference, policy),
            bleu1=bleu1(r.hypothesis, r.reference, policy),
            n_ref_tokens=len(tokenize_chars(ref_norm)),
            n_terms_in_ref=len(lexicon.find_terms(ref_norm)) if lexicon else 0,
        )
        if lexicon is not None:
            score.med_acc = med_term_accuracy(r.hypothesis, r.reference, lexicon, policy)
        if embeddings is not None:
            score.bertscore_f1 = _bertscore_for(r.id, embeddings)
        scored.append(replace(r, score=score))
    return replace(run, results=scored, lexicon_sha256=lexicon.sha256() if lexicon else None)


def _bertscore_for(utt_id: str, embeddings: dict) -> float:
    for role in ("hyp", "ref"):
        if (utt_id, role) not in embeddings:
            raise MetricError(f"embedding file has no {role} embeddings for utterance {utt_id!r}")
    hyp, ref = embeddings[(utt_id, "hyp")], embeddings[(utt_id, "ref")]
    if len(hyp) == 0:
        return 0.0  # empty hypothesis matches nothing
    return bertscore_f1(hyp, ref)


@dataclass
class StratumRow:
    axis: str
    stratum: str
    model: str
    n: int
    mean: dict
    sd: dict
    count: dict
    audio_seconds: float
    wall_seconds: float

    @property
    def rtf(self) -> Optional[float]:
        return self.wall_seconds / self.audio_seconds if self.audio_seconds > 0 else None


@dataclass
class StratifiedReport:
    rows: list[StratumRow]
    provenance: dict

    def row(self, axis: str, stratum: str, model: Optional[str] = None) -> StratumRow:
        for r in self.rows:
            if r.axis == axis and r.stratum == stratum and (model is None or r.model == model):
                return r
        raise KeyError((axis, stratum, model))

    def strata(self, axis: str) -> list[StratumRow]:
        return [r for r in self.rows if r.axis == axis]


def _summarise(axis, stratum, model, results: list[UtteranceResult]) -> StratumRow:
    mean, sd, count = {}, {}, {}
    for metric in METRICS:
        vals = np.array([getattr(r.score, metric) for r in results if getattr(r.score, metric) is not None], dtype=float)
        count[metric] = int(vals.size)
        mean[metric] = float(vals.mean()) if vals.size else None
        sd[metric] = float(vals.std(ddof=0)) if vals.size else None
    return StratumRow(
        axis=axis,
        stratum=stratum,
        model=model,
        n=len(results),
        mean=mean,
        sd=sd,
        count=count,
        audio_seconds=float(sum(r.duration_s for r in results)),
        wall_seconds=float(sum(r.wall_seconds or 0.0 for r in results)),
    )


def aggregate_stratified(run: EvalRun, axes: Sequence[str] = AXES, allow_failures: bool = False) -> StratifiedReport:
    """Mean and population SD of each metric, overall and per stratum of each axis."""
    for a in axes:
        if a not in AXES:
            raise ValueError(f"unknown axis {a!r}; choose from {AXES}")
    if not run.complete and not allow_failures:
        raise RunFailed("run has failed utterances; pass allow_failures to report anyway", run)
    results = [r for r in run.results if r.score is not None]
    if not results:
        raise ValueError("run has no scored utterances")
    rows = [_summarise("overall", "all", run.adapter, results)]
    for a in axes:
        groups: dict[str, list] = {}
        for r in results:
            groups.setdefault(getattr(r, a) or MISSING_STRATUM, []).append(r)
        rows += [_summarise(a, key, run.adapter, groups[key]) for key in sorted(groups)]
    provenance = {
        "runs": [
            {
                "model": run.adapter,
                "manifest": run.manifest,
                "norm_policy": run.norm_policy.to_dict(),
                "lexicon_sha256": run.lexicon_sha256,
                "seed": run.seed,
                "failures": list(run.failures),
            }
        ],
        "conventions": CONVENTIONS,
        "tool": f"clinasr {__version__}",
    }
    return StratifiedReport(rows, provenance)


def merge_reports(reports: Sequence[StratifiedReport]) -> StratifiedReport:
    """Interleave several models' reports so each stratum lists every model."""
    axis_order = {"overall": 0, **{a: i + 1 for i, a in enumerate(AXES)}}
    model_order = {}
    for rep in reports:
        for r in rep.rows:
            model_order.setdefault(r.model, len(model_order))
    rows = sorted(
        (r for rep in reports for r in rep.rows),
        key=lambda r: (axis_order[r.axis], r.stratum, model_order[r.model]),
    )
    provenance = {
        "runs": [run for rep in reports for run in rep.provenance["runs"]],
        "conventions": CONVENTIONS,
        "tool": f"clinasr {__version__}",
    }
    return StratifiedReport(rows, provenance)


_CSV_FIELDS = ["axis", "stratum", "model", "n"]


def _csv_columns(timing: bool) -> list[str]:
    cols = list(_CSV_FIELDS)
    for m in METRICS:
        cols += [f"{m}_mean", f"{m}_sd", f"{m}_n"]
    if timing:
        cols += ["audio_seconds", "wall_seconds", "rtf"]
    return cols


def _row_dict(r: StratumRow, timing: bool) -> dict:
    d = {"axis": r.axis, "stratum": r.stratum, "model": r.model, "n": r.n}
    for m in METRICS:
        d[f"{m}_mean"], d[f"{m}_sd"], d[f"{m}_n"] = r.mean[m], r.sd[m], r.count[m]
    if timing:
        d.update(audio_seconds=r.audio_seconds, wall_seconds=r.wall_seconds, rtf=r.rtf)
    return d


def _fmt_pct(mean, sd) -> str:
    if mean is None:
        return "n/a"
    return f"{100 * mean:.2f} ± {100 * sd:.2f}"


def render_markdown(r: StratifiedReport, timing: bool = True) -> str:
    out = ["# ASR evaluation report", ""]
    for run in r.provenance["runs"]:
        policy = ", ".join(f"{k}={str(v).lower()}" for k, v in run["norm_policy"].items())
        out.append(f"- model `{run['model']}` on `{run['manifest']}`, seed {run['seed']}")
        out.append(f"  - norm policy: {policy}")
        out.append(f"  - lexicon sha256: {run['lexicon_sha256'] or 'none'}")
    for k, v in r.provenance["conventions"].items():
        out.append(f"- {k}: {v}")
    out.append("")
    header = ["Axis", "Stratum", "Model", "N"] + [f"{METRIC_LABELS[m]} (%)" for m in METRICS]
    if timing:
        header.append("RTF")
    out.append("| " + " | ".join(header) + " |")
    out.append("|" + "|".join(["---"] * 4 + ["---:"] * (len(header) - 4)) + "|")
    for row in r.rows:
        cells = [row.axis, row.stratum, row.model, str(row.n)]
        cells += [_fmt_pct(row.mean[m], row.sd[m]) for m in METRICS]
        if timing:
            cells.append(f"{row.rtf:.4f}" if row.rtf is not None else "n/a")
        out.append("| " + " | ".join(cells) + " |")
    return "\n".join(out) + "\n"


def render_csv(r: StratifiedReport, timing: bool = True) -> str:
    buf = io.StringIO()
    buf.write("# provenance: " + json.dumps(r.provenance, ensure_ascii=False, sort_keys=True) + "\n")
    writer = csv.DictWriter(buf, fieldnames=_csv_columns(timing), lineterminator="\n")
    writer.writeheader()
    for row in r.rows:
        writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in _row_dict(row, timing).items()})
    return buf.getvalue()


def render_jsonl(r: StratifiedReport, timing: bool = True) -> str:
    lines = [json.dumps({"provenance": r.provenance}, ensure_ascii=False, sort_keys=True)]
    lines += [json.dumps(_row_dict(row, timing), ensure_ascii=False) for row in r.rows]
    return "\n".join(lines) + "\n"


_RENDERERS = {"markdown": render_markdown, "md": render_markdown, "csv": render_csv, "jsonl": render_jsonl}


def emit_report(r: StratifiedReport, fmt: str, path=None, timing: bool = True) -> str:
    """Render ``r`` as csv, jsonl or markdown; write to ``path`` when given."""
    try:
        text = _RENDERERS[fmt](r, timing=timing)
    except KeyError:
        raise ValueError(f"unknown report format {fmt!r}") from None
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_report_csv(path_or_text) -> tuple[dict, list[dict]]:
    """Parse a CSV report back into (provenance, rows) with numeric fields restored."""
    text = Path(path_or_text).read_text(encoding="utf-8") if isinstance(path_or_text, Path) else path_or_text
    lines = text.splitlines()
    provenance = json.loads(lines[0].removeprefix("# provenance: "))
    rows = []
    for d in csv.DictReader(lines[1:]):
        row = {}
        for k, v in d.items():
            if k in ("axis", "stratum", "model"):
                row[k] = v
            elif v == "":
                row[k] = None
            elif k == "n" or k.endswith("_n"):
                row[k] = int(v)
            else:
                row[k] = float(v)
        rows.append(row)
    return provenance, rows
