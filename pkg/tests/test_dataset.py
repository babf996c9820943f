import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opinionxf.dataset import (
    PCG32,
    AnswerVocabulary,
    BayesOracle,
    GeneratorConfig,
    SurveyRecord,
    build_vocabulary,
    decode_record,
    default_generator_config,
    encode_record,
    generate_synthetic,
    load_records,
    measure_shift_rate,
    shift_index,
    split,
    topic_valences,
    write_records,
)
from opinionxf.errors import ConfigError, ParseError, SchemaError, VocabularyError

from conftest import flat_topic


def rec(pid, pre, post, topic="t", deck=None):
    return SurveyRecord(pid, topic, pre, post, deck)


# --- records and files -----------------------------------------------------

def test_record_rejects_length_mismatch():
    with pytest.raises(SchemaError):
        rec("a", ["x", "y"], ["x"])


def test_record_rejects_empty_answer():
    with pytest.raises(SchemaError):
        rec("a", ["x", ""], ["x", "y"])


def test_load_three_lines_roundtrip(tmp_path):
    rows = [rec(f"p{i}", ["a", "b"], ["b", "a"], deck="d1" if i else None) for i in range(3)]
    path = tmp_path / "r.jsonl"
    write_records(rows, path)
    assert load_records(path) == rows


def test_missing_post_answers_names_line(tmp_path):
    path = tmp_path / "r.jsonl"
    good = {"participant_id": "a", "topic": "t", "pre_answers": ["x"], "post_answers": ["y"]}
    bad = {"participant_id": "b", "topic": "t", "pre_answers": ["x"]}
    path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(SchemaError) as info:
        load_records(path)
    assert info.value.line == 2
    assert "line 2" in str(info.value)


def test_malformed_json_is_parse_error(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(ParseError) as info:
        load_records(path)
    assert info.value.line == 1


def test_unknown_topic_rejected(tmp_path):
    path = tmp_path / "r.jsonl"
    write_records([rec("a", ["x"], ["y"], topic="mystery")], path)
    with pytest.raises(SchemaError):
        load_records(path, topics=["known"])


def test_generated_corpus_roundtrip(tmp_path, small_records):
    path = tmp_path / "d.jsonl"
    write_records(small_records, path)
    assert load_records(path) == small_records


# --- vocabulary ------------------------------------------------------------

def test_vocab_is_lexicographic():
    vocab = build_vocabulary([rec("a", ["yes"], ["no"]), rec("b", ["yes"], ["yes"])])
    assert vocab.per_question[0] == {"no": 0, "yes": 1}


def test_vocab_per_question_spaces():
    vocab = build_vocabulary([rec("a", ["x", "p"], ["y", "q"])])
    assert vocab.per_question == [{"x": 0, "y": 1}, {"p": 0, "q": 1}]


def test_ragged_questions_rejected():
    with pytest.raises(SchemaError):
        build_vocabulary([rec("a", ["x"], ["y"]), rec("b", ["x", "y"], ["y", "x"])])


def test_default_corpus_vocab_sizes():
    cfg = default_generator_config(1000, 0)
    vocab = build_vocabulary(generate_synthetic(cfg))
    assert vocab.sizes == cfg.answers_per_question


def test_first_options_encode_to_zero():
    vocab = build_vocabulary([rec("a", ["a", "m"], ["b", "n"])])
    assert encode_record(rec("z", ["a", "m"], ["a", "m"]), vocab) == ([0, 0], [0, 0])


def test_unseen_answer_names_question():
    vocab = build_vocabulary([rec("a", ["a", "m"], ["b", "n"])])
    with pytest.raises(VocabularyError) as info:
        encode_record(rec("z", ["a", "zzz"], ["a", "m"]), vocab)
    assert info.value.question == 1 and info.value.answer == "zzz"


def test_decode_inverts_encode(small_records):
    vocab = build_vocabulary(small_records)
    for r in small_records:
        assert decode_record(r, *encode_record(r, vocab), vocab) == r


def test_vocab_list_roundtrip(small_records):
    vocab = build_vocabulary(small_records)
    assert AnswerVocabulary.from_list(vocab.to_list()).per_question == vocab.per_question


# --- split -----------------------------------------------------------------

def test_pcg32_reference_stream():
    # pcg32 reference demo, seed 42 / sequence 54
    r = PCG32(42, 54)
    assert [r.next_u32() for _ in range(6)] == [
        0xA15C02B7, 0x7B47F409, 0xBA1D3330, 0x83D2F293, 0xBFA4784B, 0xCBED606E]


def test_split_sizes_ten():
    rows = [rec(f"p{i}", ["a"], ["a"]) for i in range(10)]
    sp = split(rows, 0.8, 0)
    assert (len(sp.train), len(sp.validation)) == (8, 2)


def test_split_deterministic_and_seed_sensitive():
    rows = [rec(f"p{i}", ["a"], ["a"]) for i in range(1000)]
    assert split(rows, 0.8, 3) == split(rows, 0.8, 3)
    assert split(rows, 0.8, 3).train != split(rows, 0.8, 4).train


def test_split_too_small():
    with pytest.raises(ConfigError):
        split([rec(f"p{i}", ["a"], ["a"]) for i in range(4)])


@given(n=st.integers(5, 300), seed=st.integers(0, 2**63), ratio=st.floats(0.05, 0.95))
@settings(max_examples=60, deadline=None)
def test_split_partitions_input(n, seed, ratio):
    rows = [rec(f"p{i}", ["a"], ["a"]) for i in range(n)]
    sp = split(rows, ratio, seed)
    ids = [r.participant_id for r in sp.train + sp.validation]
    assert sorted(ids) == sorted(r.participant_id for r in rows)
    assert len(sp.train) == math.floor(ratio * n + 0.5)


@given(seed=st.integers(0, 2**64 - 1), n=st.integers(1, 50))
@settings(max_examples=50, deadline=None)
def test_pcg_permutation_is_permutation(seed, n):
    assert sorted(PCG32(seed).permutation(n)) == list(range(n))


# --- generator -------------------------------------------------------------

def test_no_shift_limit(two_topic_config):
    for t in two_topic_config.topics:
        t.shift_prob = [0.0] * 3
        t.convergence_prob = [0.0] * 3
    for r in generate_synthetic(two_topic_config):
        assert r.pre_answers == r.post_answers


def test_full_convergence(two_topic_config):
    two_topic_config.topics[1].convergence_prob = [0.0, 1.0, 0.0]
    two_topic_config.topics[1].shift_prob = [0.0, 0.0, 0.0]
    for r in generate_synthetic(two_topic_config):
        if r.topic == "beta":
            assert r.post_answers[1] == "opt_1"


def test_generator_is_deterministic():
    cfg = default_generator_config(200, 7)
    assert generate_synthetic(cfg) == generate_synthetic(cfg)


def test_shift_rate_p04_window():
    cfg = GeneratorConfig([flat_topic("only", 0.4)], n_participants=2000, n_questions=1,
                          answers_per_question=[4], noise_prob=0.0, seed=11)
    measured = measure_shift_rate(generate_synthetic(cfg))["only"][0]
    expected = BayesOracle(cfg).expected_shift_rate("only", 0)
    # one of four pre answers saturates in place: 0.4 * 3/4
    assert expected == pytest.approx(0.3)
    assert abs(measured - expected) < 0.03


def test_shift_rate_unsaturated_window():
    cfg = GeneratorConfig([flat_topic("only", 0.4)], n_participants=2000, n_questions=1,
                          answers_per_question=[4], noise_prob=0.0, seed=12)
    rate = measure_shift_rate(generate_synthetic(cfg))["only"][0]
    # rescale by the 3/4 of cells that can move to compare against p itself
    assert 0.37 <= rate / 0.75 <= 0.43


def test_default_corpus_shift_rates_match_analytic():
    cfg = default_generator_config(2000, 0)
    measured = measure_shift_rate(generate_synthetic(cfg))
    oracle = BayesOracle(cfg)
    counts = {t: sum(r.topic == t for r in generate_synthetic(cfg)) for t in cfg.topic_names}
    for t in cfg.topic_names:
        expected = np.array([oracle.expected_shift_rate(t, q) for q in range(cfg.n_questions)])
        assert abs(measured[t].mean() - expected.mean()) <= 0.03
        # per question the sample is ~667 cells; allow four binomial standard errors
        sigma = np.sqrt(expected * (1 - expected) / counts[t])
        assert np.all(np.abs(measured[t] - expected) <= 4 * sigma)


def test_measure_shift_rate_limits():
    same = [rec("a", ["x", "y"], ["x", "y"]), rec("b", ["y", "y"], ["y", "y"])]
    diff = [rec("a", ["x", "y"], ["y", "x"])]
    assert measure_shift_rate(same)["t"].tolist() == [0.0, 0.0]
    assert measure_shift_rate(diff)["t"].tolist() == [1.0, 1.0]


def test_config_validation():
    with pytest.raises(ConfigError):
        GeneratorConfig([flat_topic("a", 0.7, 0.5)], n_questions=1, answers_per_question=[3])
    with pytest.raises(ConfigError):
        GeneratorConfig([flat_topic("a", 0.1)], n_questions=1, answers_per_question=[1])
    with pytest.raises(ConfigError):
        GeneratorConfig([flat_topic("a", 0.1)], n_questions=1, answers_per_question=[3],
                        noise_prob=1.5)


def test_config_dict_roundtrip():
    cfg = default_generator_config(300, 4)
    assert GeneratorConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


@given(pre=st.integers(0, 9), V=st.integers(2, 10), valence=st.sampled_from([-1, 1]))
def test_shift_index_saturates(pre, V, valence):
    pre = min(pre, V - 1)
    out = shift_index(pre, valence, V)
    assert 0 <= out < V
    assert abs(out - pre) <= 1
    if 0 < pre < V - 1:
        assert out == pre + valence


def test_valences_are_signs():
    vals = topic_valences(default_generator_config())
    assert set(vals.values()) <= {-1, 1}


# --- Bayes oracle ----------------------------------------------------------

def brute_posterior(cfg, topic, q, a):
    """Monte-Carlo-free enumeration of the generative branches."""
    t = next(t for t in cfg.topics if t.name == topic)
    V = cfg.answers_per_question[q]
    v = topic_valences(cfg)[topic]
    out = np.zeros(V)
    c, p, eta = t.convergence_prob[q], t.shift_prob[q], cfg.noise_prob
    branches = [(c, t.consensus_option[q]), (p, shift_index(a, v, V)), (1 - c - p, a)]
    for w, b in branches:
        out[b] += w * (1 - eta)
    out += eta / V
    return out


def test_posterior_matches_enumeration():
    cfg = default_generator_config()
    oracle = BayesOracle(cfg)
    for t in cfg.topic_names:
        for q in range(cfg.n_questions):
            for a in range(cfg.answers_per_question[q]):
                post = oracle.posterior(t, q, a)
                np.testing.assert_allclose(post, brute_posterior(cfg, t, q, a), atol=1e-15)
                assert post.sum() == pytest.approx(1.0)


def test_oracle_matches_empirical_argmax():
    cfg = default_generator_config(6000, 2)
    records = generate_synthetic(cfg)
    oracle = BayesOracle(cfg)
    preds = oracle.predict_records(records)
    hits = np.mean([a == b for pr, r in zip(preds, records) for a, b in zip(pr, r.post_answers)])
    assert abs(hits - oracle.expected_accuracy()) < 0.02


def test_expected_macro_f1_close_to_sample():
    from opinionxf.metrics import macro_f1

    cfg = default_generator_config(6000, 3)
    records = generate_synthetic(cfg)
    oracle = BayesOracle(cfg)
    vocab = build_vocabulary(records)
    preds = [[vocab.encode(q, a) for q, a in enumerate(row)] for row in oracle.predict_records(records)]
    gold = [encode_record(r, vocab)[1] for r in records]
    assert abs(macro_f1(preds, gold) - oracle.expected_macro_f1()) < 0.02
