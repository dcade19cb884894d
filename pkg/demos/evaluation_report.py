"""Evaluate two mock recognisers on a 5 x 6 x 10 fixture and print a stratified report.

Run: python3 demos/evaluation_report.py
"""

import tempfile

from clinasr.demo_data import demo_lexicon, prospective_fixture
from clinasr.harness import (
    CorruptingAdapter,
    EchoReferenceAdapter,
    aggregate_stratified,
    merge_reports,
    render_markdown,
    run_transcriber,
    score_run,
)

fixture = prospective_fixture(tempfile.mkdtemp(prefix="clinasr-fixture-"))
lexicon = demo_lexicon()
reports = []
for adapter in (EchoReferenceAdapter(), CorruptingAdapter(6)):
    run = score_run(run_transcriber(fixture, adapter, parallelism=4), lexicon)
    reports.append(aggregate_stratified(run, axes=["category"]))
print(render_markdown(merge_reports(reports), timing=False))
