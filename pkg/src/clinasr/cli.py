"""``clinasr`` command line: one verb per pipeline stage.

Exit status: 0 success, 1 data or validation error, 2 usage error.
Machine-readable output goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shlex
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .audio import AudioError, SnrSchedule, DEFAULT_SCHEDULE, read_wav
from .checkpoints import CheckpointError, average_checkpoints, read_checkpoint_metas, top_k_average
from .corpus import (
    ManifestError,
    ProviderError,
    StubTtsProvider,
    SubprocessTtsProvider,
    augment_with_noise,
    build_synthetic_manifest,
    load_noise_bank,
    read_manifest,
    stratified_split,
    validate_manifest,
    write_manifest,
)
from .features import MfccConfig, compute_mfcc, tsne_project, utterance_embedding
from .harness import (
    AXES,
    AdapterError,
    CorruptingAdapter,
    EchoReferenceAdapter,
    RunFailed,
    SubprocessAdapter,
    ThrottledAdapter,
    aggregate_stratified,
    emit_report,
    merge_reports,
    read_run,
    run_transcriber,
    score_run,
    write_run,
)
from .metrics import MetricError, load_lexicon
from .snr import estimate_snr_wada

log = logging.getLogger("clinasr")

DATA_ERRORS = (
    AudioError,
    CheckpointError,
    ManifestError,
    MetricError,
    ProviderError,
    AdapterError,
    RunFailed,
    FileNotFoundError,
    NotADirectoryError,
    PermissionError,
    ValueError,
)


class UsageError(Exception):
    pass


def _csv_floats(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_list(text):
    return [x for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker count (default: logical cores)")
    g.add_argument("--quiet", action="store_true", help="suppress diagnostics on stderr")
    g.add_argument("--config", help="key = value file; keys mirror long flag names")

    parser = argparse.ArgumentParser(prog="clinasr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"clinasr {__version__}")
    sub = parser.add_subparsers(dest="verb", metavar="VERB")

    def verb(name, help):
        return sub.add_parser(name, help=help, description=help, parents=[common])

    p = verb("synth", "synthesize one utterance per (text, voice) into a new manifest")
    p.add_argument("texts", help="UTF-8 file, one report text per line")
    p.add_argument("--voices", type=_csv_list, default=["male", "female"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--provider-cmd", help="external TTS command (JSON-lines protocol); default: bundled stub")

    p = verb("augment", "mix a clean manifest with operating-room noise at scheduled SNRs")
    p.add_argument("manifest")
    p.add_argument("--noise-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--snr-mean", type=float, default=DEFAULT_SCHEDULE.mean_db)
    p.add_argument("--snr-sd", type=float, default=DEFAULT_SCHEDULE.sd_db)
    p.add_argument("--snr-low", type=float, default=DEFAULT_SCHEDULE.low_db)
    p.add_argument("--snr-high", type=float, default=DEFAULT_SCHEDULE.high_db)

    p = verb("snr-estimate", "blind WADA SNR estimate per WAV file")
    p.add_argument("wavs", nargs="+")

    p = verb("mfcc", "pooled MFCC embedding (mean and std per coefficient) per utterance")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)

    p = verb("tsne", "2-D exact t-SNE of utterance embeddings")
    p.add_argument("features")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--out", required=True)

    p = verb("split", "assign train/val/test stratified by voice and duration quartile")
    p.add_argument("manifest")
    p.add_argument("--fractions", type=_csv_floats, default=[0.8, 0.1, 0.1])
    p.add_argument("--out", required=True)

    p = verb("validate", "check a manifest; prints a JSON findings report")
    p.add_argument("manifest")
    p.add_argument("--expect", help="layout such as 5x6x10 or speaker=6,n=100")

    p = verb("eval", "transcribe a manifest with an ASR adapter")
    p.add_argument("manifest")
    p.add_argument("--adapter", default="echo", help="echo | corrupt[:N] | cmd (see --adapter-cmd)")
    p.add_argument("--adapter-cmd", help="external ASR command (JSON-lines protocol)")
    p.add_argument("--throttle-rtf", type=float, help="spend this many seconds per audio second")
    p.add_argument("--partial", help="where to save partial results if utterances fail")
    p.add_argument("--out", required=True)

    p = verb("score", "score an evaluation run")
    p.add_argument("run")
    p.add_argument("--lexicon", help="term file: one term per line, optional TAB category")
    p.add_argument("--embeddings", help="embedding-provider file for BERTScore")
    p.add_argument("--out", required=True)

    p = verb("report", "stratified mean and SD report for one or more scored runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("--axes", type=_csv_list, default=list(AXES))
    p.add_argument("--format", choices=["markdown", "csv", "jsonl"], default="markdown")
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock derived columns")
    p.add_argument("--allow-failures", action="store_true")
    p.add_argument("--out")

    p = verb("ckpt-avg", "average tensor-file checkpoints")
    p.add_argument("files", nargs="*")
    p.add_argument("--metas", help="CSV path,step,val_loss: select by validation loss first")
    p.add_argument("--retain", type=int, default=20)
    p.add_argument("--average", type=int, default=10)
    p.add_argument("--out", required=True)
    return parser


def _read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _apply_config(subparser, path):
    """Install config values as the verb's defaults, so explicit flags still win."""
    values = _read_config(path)
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for k, v in values.items():
        if k not in actions or k in ("config", "help"):
            raise UsageError(f"unknown config key {k!r}")
        a = actions[k]
        if isinstance(a, argparse._StoreTrueAction):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        elif a.nargs in ("+", "*"):
            defaults[k] = shlex.split(v)
        else:
            defaults[k] = a.type(v) if a.type else v
    subparser.set_defaults(**defaults)
    for a in subparser._actions:
        if a.dest in defaults and a.required:
            a.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        print("clinasr: error: a verb is required", file=sys.stderr)
        return 2
    try:
        # the config file must be applied before required flags are checked
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        config = pre.parse_known_args(argv)[0].config
        verb = next((a for a in argv if a in VERBS), None)
        if config and verb:
            _apply_config(parser._subparsers._group_actions[0].choices[verb], config)
        args = parser.parse_args(argv)
        if args.verb is None:
            parser.print_usage(sys.stderr)
            return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, OSError) as exc:
        print(f"clinasr: error: {exc}", file=sys.stderr)
        return 2

    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(name)s: %(levelname)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "verb"}
    log.info("%s options %s", args.verb, json.dumps(resolved, ensure_ascii=False, default=str))
    try:
        return VERBS[args.verb](args) or 0
    except DATA_ERRORS as exc:
        print(f"clinasr {args.verb}: error: {exc}", file=sys.stderr)
        return 1


def run_command(argv) -> int:
    return main(argv)


def _cmd_synth(args):
    texts = [t for t in Path(args.texts).read_text(encoding="utf-8").splitlines() if t.strip()]
    provider = SubprocessTtsProvider(shlex.split(args.provider_cmd)) if args.provider_cmd else StubTtsProvider()
    m = build_synthetic_manifest(texts, args.voices, provider, args.out_dir, jobs=args.jobs)
    print(write_manifest(m, Path(args.out_dir) / "manifest.jsonl"))


def _cmd_augment(args):
    clean = read_manifest(args.manifest)
    bank = load_noise_bank(args.noise_dir)
    schedule = SnrSchedule(args.snr_mean, args.snr_sd, args.snr_low, args.snr_high)
    m = augment_with_noise(clean, bank, schedule, args.seed, args.out_dir, jobs=args.jobs)
    print(write_manifest(m, Path(args.out_dir) / "manifest.jsonl"))


def _cmd_snr(args):
    status = 0
    for path in args.wavs:
        try:
            est = estimate_snr_wada(read_wav(path))
        except (AudioError, FileNotFoundError) as exc:
            print(f"clinasr snr-estimate: {path}: {exc}", file=sys.stderr)
            status = 1
            continue
        print(f"{path}\t{est.snr_db:.2f}")
    return status


def _cmd_mfcc(args):
    m = read_manifest(args.manifest)
    records = sorted(m.records, key=lambda r: r.id)
    cfg = MfccConfig()

    def embed(rec):
        return utterance_embedding(compute_mfcc(read_wav(m.audio_file(rec)), cfg))

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        vectors = list(pool.map(embed, records))
    dim = len(vectors[0])
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "center"] + [f"f{i}" for i in range(dim)])
        for rec, vec in zip(records, vectors):
            w.writerow([rec.id, rec.center or ""] + [repr(float(v)) for v in vec])
    print(args.out)


def _cmd_tsne(args):
    with open(args.features, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{args.features}: no feature rows")
    cols = [c for c in rows[0] if c not in ("id", "center")]
    x = np.array([[float(r[c]) for c in cols] for r in rows])
    emb = tsne_project(x, args.perplexity, args.iterations, args.seed, labels=[r["center"] for r in rows])
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "x", "y", "center"])
        for r, (px, py) in zip(rows, emb.points):
            w.writerow([r["id"], repr(float(px)), repr(float(py)), r["center"]])
    print(args.out)


def _cmd_split(args):
    m = stratified_split(read_manifest(args.manifest), args.fractions, args.seed)
    print(write_manifest(m, args.out))


def _cmd_validate(args):
    report = validate_manifest(read_manifest(args.manifest), args.expect)
    print(json.dumps(report.to_dict(), ensure_ascii=False, indent=2))
    return 0 if report.passed else 1


def _make_adapter(args):
    name = args.adapter
    if name == "echo":
        adapter = EchoReferenceAdapter()
    elif name.startswith("corrupt"):
        _, _, every = name.partition(":")
        adapter = CorruptingAdapter(int(every) if every else 6)
    elif name == "cmd":
        if not args.adapter_cmd:
            raise UsageError("--adapter cmd needs --adapter-cmd")
        adapter = SubprocessAdapter(shlex.split(args.adapter_cmd))
    else:
        raise UsageError(f"unknown adapter {name!r}")
    if args.throttle_rtf is not None:
        adapter = ThrottledAdapter(adapter, args.throttle_rtf)
    return adapter


def _cmd_eval(args):
    m = read_manifest(args.manifest)
    try:
        adapter = _make_adapter(args)
    except UsageError as exc:
        print(f"clinasr eval: error: {exc}", file=sys.stderr)
        return 2
    run = run_transcriber(
        m, adapter, parallelism=args.jobs, seed=args.seed, partial_path=args.partial, manifest_name=Path(args.manifest).name
    )
    print(write_run(run, args.out))


def _cmd_score(args):
    run = read_run(args.run)
    lexicon = load_lexicon(args.lexicon, run.norm_policy) if args.lexicon else None
    print(write_run(score_run(run, lexicon, args.embeddings), args.out))


def _cmd_report(args):
    reports = [aggregate_stratified(read_run(p), args.axes, allow_failures=args.allow_failures) for p in args.runs]
    report = reports[0] if len(reports) == 1 else merge_reports(reports)
    text = emit_report(report, args.format, args.out, timing=not args.no_timing)
    print(args.out if args.out else text, end="\n" if args.out else "")


def _cmd_ckpt_avg(args):
    if args.metas:
        tf = top_k_average(read_checkpoint_metas(args.metas), args.retain, args.average, args.out)
    elif args.files:
        tf = average_checkpoints(args.files, args.out)
    else:
        raise CheckpointError("give tensor files or --metas")
    print(f"{args.out}\t{len(tf.sources)} sources")


VERBS = {
    "synth": _cmd_synth,
    "augment": _cmd_augment,
    "snr-estimate": _cmd_snr,
    "mfcc": _cmd_mfcc,
    "tsne": _cmd_tsne,
    "split": _cmd_split,
    "validate": _cmd_validate,
    "eval": _cmd_eval,
    "score": _cmd_score,
    "report": _cmd_report,
    "ckpt-avg": _cmd_ckpt_avg,
}


if __name__ == "__main__":
    sys.exit(main())
