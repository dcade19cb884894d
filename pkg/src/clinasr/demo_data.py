"""Small endoscopy-style text corpus and term lexicon for demos and self-tests.

The sentences are written for this package; they imitate report phrasing
in each clinical content category but contain no patient data.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from .corpus import CATEGORIES, Manifest, StubTtsProvider, TtsProvider, UtteranceRecord, _synthesize_records, _timestamp
from .metrics import TermLexicon
from .textnorm import DEFAULT_POLICY
from . import __version__

SENTENCES = {
    "A": [
        "患者因便血两周行结肠镜检查",
        "既往有结肠息肉切除病史",
        "患者有结直肠癌家族史要求复查",
        "主诉腹痛伴排便习惯改变",
        "三年前行EMR术后定期复查",
        "患者无痛肠镜检查前签署知情同意",
        "体检发现粪便潜血阳性",
        "既往诊断溃疡性结肠炎五年",
        "患者一年前行ESD术后复查",
        "因贫血原因待查行结肠镜检查",
    ],
    "B": [
        "肠道准备良好BBPS评分8分",
        "肠道准备欠佳BBPS评分5分",
        "回盲部可见少量粪水",
        "进镜至回肠末端黏膜未见异常",
        "患者生命体征平稳继续退镜",
        "升结肠见少许粪渣冲洗后视野清晰",
        "退镜时间大于六分钟",
        "横结肠肠腔通畅",
        "阑尾开口清晰可见",
        "肝曲及脾曲黏膜光滑",
    ],
    "C": [
        "乙状结肠见一枚息肉大小约6mm",
        "横结肠见亚蒂息肉行冷圈套切除",
        "直肠见广基息肉行EMR切除",
        "升结肠见侧向发育型肿瘤行ESD",
        "降结肠息肉予钛夹夹闭创面",
        "盲肠见扁平息肉表面染色后边界清楚",
        "乙状结肠多发息肉行活检",
        "放大内镜下腺管开口为三型",
        "息肉切除后创面无出血",
        "直肠见一枚隆起型病变约10mm",
    ],
    "D": [
        "直肠见溃疡型肿物占据肠腔半周",
        "乙状结肠见隆起型肿物质脆易出血",
        "肿物距肛缘约十厘米",
        "取活检六块送病理",
        "肠腔狭窄内镜无法通过",
        "升结肠见菜花样肿物",
        "肿物表面糜烂覆污秽苔",
        "建议行增强CT评估分期",
        "降结肠见环周生长肿物",
        "直肠肿物考虑结直肠癌",
    ],
    "E": [
        "全结肠黏膜充血水肿血管纹理消失",
        "直肠至乙状结肠见连续性糜烂",
        "横结肠见散在溃疡",
        "回肠末端见纵行溃疡",
        "黏膜呈颗粒样改变质脆",
        "升结肠见炎性息肉",
        "病变呈节段性分布",
        "考虑溃疡性结肠炎活动期",
        "考虑克罗恩病可能",
        "于病变处活检送病理",
    ],
    "F": [
        "结论结肠多发息肉已切除",
        "建议一年后复查结肠镜",
        "术后禁食二十四小时",
        "等待病理结果决定下一步治疗",
        "建议消化内科门诊随访",
        "术后注意观察便血及腹痛",
        "结论直肠肿物性质待病理",
        "建议三个月后复查",
        "本次检查肠道准备良好",
        "建议外科会诊",
    ],
}

TERMS = [
    ("乙状结肠", "anatomy"),
    ("升结肠", "anatomy"),
    ("横结肠", "anatomy"),
    ("降结肠", "anatomy"),
    ("直肠", "anatomy"),
    ("盲肠", "anatomy"),
    ("回盲部", "anatomy"),
    ("回肠末端", "anatomy"),
    ("阑尾开口", "anatomy"),
    ("肝曲", "anatomy"),
    ("脾曲", "anatomy"),
    ("肛缘", "anatomy"),
    ("息肉", "morphology"),
    ("广基", "morphology"),
    ("亚蒂", "morphology"),
    ("溃疡", "morphology"),
    ("糜烂", "morphology"),
    ("充血水肿", "morphology"),
    ("隆起型", "morphology"),
    ("侧向发育型肿瘤", "morphology"),
    ("炎性息肉", "morphology"),
    ("菜花样", "morphology"),
    ("EMR", "procedure"),
    ("ESD", "procedure"),
    ("活检", "procedure"),
    ("冷圈套", "procedure"),
    ("钛夹", "procedure"),
    ("染色", "procedure"),
    ("放大内镜", "procedure"),
    ("结肠镜", "procedure"),
    ("便血", "context"),
    ("腹痛", "context"),
    ("家族史", "context"),
    ("溃疡性结肠炎", "context"),
    ("克罗恩病", "context"),
    ("结直肠癌", "context"),
    ("BBPS", "quality"),
    ("肠道准备", "quality"),
    ("mm", "size"),
    ("厘米", "size"),
]


def demo_lexicon() -> TermLexicon:
    return TermLexicon.from_terms(TERMS, DEFAULT_POLICY)


def all_sentences() -> list[str]:
    return [s for c in CATEGORIES for s in SENTENCES[c]]


def prospective_fixture(
    out_dir,
    centers: int = 5,
    per_cell: int = 10,
    provider: Optional[TtsProvider] = None,
    jobs: int = 1,
) -> Manifest:
    """Synthesize a centers x 6 categories x per_cell manifest shaped like a multi-center test set.

    Speakers cycle through P1..P6 and voices alternate, so every
    stratification axis is populated.
    """
    provider = provider or StubTtsProvider()
    requests, meta = [], []
    for c in range(1, centers + 1):
        for cat in CATEGORIES:
            pool = SENTENCES[cat]
            for i in range(per_cell):
                utt_id = f"C{c}-{cat}-{i:02d}"
                voice = "male" if (c + i) % 2 else "female"
                requests.append((utt_id, pool[(i + c) % len(pool)], voice))
                meta.append((f"C{c}", cat, f"P{(c * per_cell + i) % 6 + 1}", voice))
    made = _synthesize_records(requests, provider, Path(out_dir), jobs)
    records = [
        UtteranceRecord(
            id=utt_id,
            audio_path=path,
            reference=text,
            duration_s=dur,
            speaker=speaker,
            center=center,
            category=cat,
            voice=voice,
            split="test",
        )
        for (utt_id, text, _), (path, dur), (center, cat, speaker, voice) in zip(requests, made, meta)
    ]
    provenance = {
        "tool": f"clinasr {__version__}",
        "stage": "fixture",
        "provider": provider.name,
        "layout": f"center={centers},category={len(CATEGORIES)},n={per_cell}",
        "created_at": _timestamp(),
    }
    return Manifest(records, DEFAULT_POLICY, provenance, Path(out_dir).resolve())
