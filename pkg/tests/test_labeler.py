import random

import pytest
from hypothesis import given, settings, strategies as st

from vtfeed.labeler import Taxonomy, is_candidate, label_sample, resolve_token, tokenize_label

TAX = Taxonomy.load()


def test_tokenize():
    assert tokenize_label("E1", "Win32.Zbot.a") == ["zbot"]
    assert tokenize_label("E2", "Trojan.GenericKD.123") == ["trojan", "generickd"]
    assert tokenize_label("E3", "") == []
    assert tokenize_label("E4", "W32/Deadbeef.1234!tr") == []


def test_resolve():
    assert resolve_token("zeus", TAX) == "FAM:zbot"
    assert resolve_token("malicious", TAX) == "GEN:malicious"
    assert resolve_token("ddos", TAX) == "BEH:ddos"
    assert resolve_token("qwertyfam", TAX) == "UNK:qwertyfam"
    assert is_candidate("FAM:zbot") and is_candidate("UNK:x") and not is_candidate("GEN:malicious")


def test_alias_plurality():
    res = label_sample([("A", "Win32.Zbot.a"), ("B", "Trojan.Zeus!gen"), ("C", "Generic.Malware")], TAX)
    assert res.family == "FAM:zbot" and res.is_pup is False


def test_generic_only():
    assert label_sample([("A", "Generic.Malware"), ("B", "Trojan.Generic"), ("C", None)], TAX).family is None


def test_single_engine_is_not_enough():
    assert label_sample([("A", "Win32.Zbot.a"), ("B", "Generic.Malware")], TAX).family is None


def test_pup_majority():
    labels = [(f"E{i}", "Adware.X" if i < 3 else "Trojan.Agent") for i in range(5)]
    assert label_sample(labels, TAX).is_pup is True
    labels = [(f"E{i}", "Adware.X" if i < 2 else "Trojan.Agent") for i in range(4)]
    assert label_sample(labels, TAX).is_pup is False
    assert label_sample([], TAX).is_pup is False


def test_tie_breaks_lexicographically():
    labels = [("A", "Trojan.Bravofam"), ("B", "Trojan.Bravofam"), ("C", "Trojan.Alphafam"), ("D", "Trojan.Alphafam")]
    assert label_sample(labels, TAX).family == "UNK:alphafam"


def test_tags_need_two_engines():
    res = label_sample([("A", "Trojan.Zbot"), ("B", "Trojan.Zbot"), ("C", "Ddos.Zbot")], TAX)
    assert res.family == "FAM:zbot"
    assert res.tags == (("CLASS:trojan", 2),)


def test_duplicate_engines_count_once():
    assert label_sample([("A", "Zbot"), ("A", "Zbot")], TAX).family is None


def test_alias_cycle_rejected():
    with pytest.raises(ValueError):
        Taxonomy.parse("", "a\tb\nb\tc\n")


def test_custom_taxonomy():
    tax = Taxonomy.parse("trojan\tCLASS:trojan\nfoo\tFAM\njunk\tNOISE\n", "bar\tfoo\n")
    assert resolve_token("bar", tax) == "FAM:foo"
    assert tokenize_label("E", "Junk.Trojan", tax.noise) == ["trojan"]


words = st.sampled_from(["zbot", "zeus", "Trojan", "Generic", "adware", "emotet", "Win32", "a", "123", "qwerty"])
labels_st = st.lists(
    st.tuples(st.sampled_from(["A", "B", "C", "D", "E"]), st.one_of(st.none(), st.lists(words, min_size=1, max_size=4).map(".".join))),
    max_size=8,
    unique_by=lambda t: t[0],
)


@settings(max_examples=200, deadline=None)
@given(labels_st, st.randoms())
def test_order_invariance(labels, rnd):
    res = label_sample(labels, TAX)
    shuffled = list(labels)
    rnd.shuffle(shuffled)
    assert label_sample(shuffled, TAX) == res
    doubled = [(e, f"{l}.{l}" if l else l) for e, l in labels]
    assert label_sample(doubled, TAX) == res
