from hypothesis import given, strategies as st

from clinasr.textnorm import DEFAULT_POLICY, NormPolicy, detokenize, normalize_transcript, tokenize_chars

MIXED = st.text(
    alphabet=st.one_of(
        st.sampled_from(list("乙状结肠息肉切除评分ＥＭＲａｂＣ１２。，、！？（）「」 \t　")),
        st.sampled_from(list("ABCxyzÉéßİıǅ0123456789.,;:!?-'\" ")),
        st.characters(codec="utf-8"),
    ),
    max_size=40,
)
POLICIES = st.builds(NormPolicy, st.booleans(), st.booleans(), st.booleans(), st.booleans())


def test_examples():
    assert normalize_transcript("ＥＭＲ切除。") == "emr切除"
    assert normalize_transcript("") == ""
    assert normalize_transcript("乙状 结肠， 息肉") == "乙状结肠息肉"
    assert normalize_transcript("BBPS  评分 3 分") == "bbps评分3分"
    assert normalize_transcript("EMR  ESD") == "emr esd"
    assert normalize_transcript("6 mm") == "6 mm"
    assert normalize_transcript("  ｂｂｐｓ\t８ ") == "bbps 8"


def test_policy_switches():
    text = "ＥＭＲ，切除"
    assert normalize_transcript(text, NormPolicy(fold_width=False)) == "ｅｍｒ切除"
    assert tokenize_chars("ｅｍｒ切除") == ["ｅｍｒ", "切", "除"]
    assert normalize_transcript(text, NormPolicy(strip_punctuation=False)) == "emr,切除"
    assert normalize_transcript(text, NormPolicy(lowercase_latin=False)) == "EMR切除"
    assert normalize_transcript("a  b 切", NormPolicy(collapse_whitespace=False)) == "a  b 切"


def test_policy_round_trip():
    p = NormPolicy(True, False, True, False)
    assert NormPolicy.from_dict(p.to_dict()) == p
    assert DEFAULT_POLICY.to_dict() == {
        "strip_punctuation": True,
        "fold_width": True,
        "lowercase_latin": True,
        "collapse_whitespace": True,
    }


@given(MIXED, POLICIES)
def test_idempotent(text, policy):
    once = normalize_transcript(text, policy)
    assert normalize_transcript(once, policy) == once


def test_tokenize_examples():
    assert tokenize_chars("乙状结肠") == ["乙", "状", "结", "肠"]
    assert tokenize_chars("emr切除") == ["emr", "切", "除"]
    assert tokenize_chars("bbps评分3分") == ["bbps", "评", "分", "3", "分"]
    assert tokenize_chars("emr esd") == ["emr", "esd"]
    assert tokenize_chars("10mm") == ["1", "0", "mm"]
    assert tokenize_chars("") == []


@given(MIXED)
def test_tokenization_exhaustive_and_non_overlapping(text):
    norm = normalize_transcript(text)
    toks = tokenize_chars(norm)
    assert "".join(toks) == "".join(c for c in norm if not c.isspace())
    assert all(t and not any(c.isspace() for c in t) for t in toks)


@given(MIXED)
def test_detokenize_round_trip(text):
    toks = tokenize_chars(normalize_transcript(text))
    assert tokenize_chars(normalize_transcript(detokenize(toks))) == toks


def test_doctests():
    import doctest

    import clinasr.textnorm

    result = doctest.testmod(clinasr.textnorm)
    assert result.attempted >= 2 and result.failed == 0
