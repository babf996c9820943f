import numpy as np
import pytest

from opinionxf.embeddings import AnswerEmbeddingTable, normalize
from opinionxf.errors import ConfigError, VocabularyError
from opinionxf.model import (
    ModelConfig,
    assemble_tokens,
    encode,
    init_params,
    param_shapes,
    predict,
    predict_batch,
)


def tiny(vocab=(3, 4), **kw):
    kw.setdefault("d_model", 8)
    kw.setdefault("n_layers", 1)
    kw.setdefault("n_heads", 2)
    kw.setdefault("embedding_dim", 8)
    return ModelConfig(vocab_sizes=list(vocab), **kw)


def table_for(config, seed=0):
    r = np.random.default_rng(seed)
    return AnswerEmbeddingTable([normalize(r.standard_normal((V, config.embedding_dim)))
                                 for V in config.vocab_sizes])


def deck(E=8, seed=1):
    return normalize(np.random.default_rng(seed).standard_normal(E))


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny(d_model=10, n_heads=4)
    with pytest.raises(ConfigError):
        tiny(vocab=(1, 3))
    with pytest.raises(ConfigError):
        tiny(vocab=())


def test_config_roundtrip():
    c = tiny(use_fusion=True, fusion_bands=2)
    assert ModelConfig.from_dict(c.to_dict()) == c
    assert c.digest() == ModelConfig.from_dict(c.to_dict()).digest()


def test_init_deterministic_and_seeded():
    c = tiny()
    a, b = init_params(c, table_for(c), 3), init_params(c, table_for(c), 3)
    assert all(np.array_equal(a.arrays[k], b.arrays[k]) for k in a.arrays)
    other = init_params(c, table_for(c), 4)
    assert any(not np.array_equal(a.arrays[k], other.arrays[k]) for k in a.arrays)


def test_init_answer_rows_are_projected_table():
    c = tiny()
    table = table_for(c)
    params = init_params(c, table, 0)
    W, b = params.buffers["answer_proj.weight"], params.buffers["answer_proj.bias"]
    for q in range(c.n_questions):
        expected = np.einsum("ve,ed->vd", table[q], W) + b
        np.testing.assert_allclose(params.answer_embedding(c, q), expected, atol=1e-6)


def test_init_shape_mismatch():
    c = tiny()
    with pytest.raises(ConfigError):
        init_params(c, AnswerEmbeddingTable([np.zeros((3, 8))]), 0)


def test_init_uniform_bounds():
    c = tiny()
    params = init_params(c, table_for(c), 0)
    w = params.arrays["enc.0.attn.wq"]
    assert np.abs(w).max() <= 1 / np.sqrt(8)
    assert np.all(params.arrays["enc.0.ln1.gain"] == 1)


@pytest.mark.parametrize("flags,length", [({}, 3), ({"use_quantum": True, "use_fusion": True}, 4)])
def test_sequence_length(flags, length):
    c = tiny(fusion_bands=2, **flags)
    params = init_params(c, table_for(c), 0)
    assert assemble_tokens([0, 1], deck(), params, c).shape == (length, 8)
    assert c.n_special == length - 2


def test_zeroed_embeddings_give_zero_tokens():
    c = tiny()
    params = init_params(c, table_for(c), 0)
    for k in ("tokens.answer", "tokens.question", "tokens.position", "present.weight", "present.bias"):
        params.arrays[k] = np.zeros_like(params.arrays[k])
    assert not assemble_tokens([2, 3], deck(), params, c).any()


def test_token_assembly_formula():
    c = tiny()
    params = init_params(c, table_for(c), 0)
    A = params.arrays
    toks = assemble_tokens([2, 1], deck(), params, c)
    np.testing.assert_allclose(toks[0], deck() @ A["present.weight"] + A["present.bias"]
                               + A["tokens.position"][0])
    np.testing.assert_allclose(toks[1], A["tokens.answer"][2] + A["tokens.question"][0]
                               + A["tokens.position"][1])
    np.testing.assert_allclose(toks[2], A["tokens.answer"][3 + 1] + A["tokens.question"][1]
                               + A["tokens.position"][2])


def test_out_of_range_id():
    c = tiny()
    params = init_params(c, table_for(c), 0)
    with pytest.raises(VocabularyError):
        predict([0, 4], deck(), params, c)


def test_encode_preserves_shape(rng):
    c = tiny(n_layers=2)
    params = init_params(c, table_for(c), 0)
    x = rng.standard_normal((5, 8))
    assert encode(x, params, c).shape == (5, 8)


def test_zero_sublayers_are_identity(rng):
    c = tiny(n_layers=2)
    params = init_params(c, table_for(c), 0)
    for layer in range(2):
        for k in ("attn.wo", "attn.bo", "ff.w2", "ff.b2"):
            name = f"enc.{layer}.{k}"
            params.arrays[name] = np.zeros_like(params.arrays[name])
    x = rng.standard_normal((4, 8))
    np.testing.assert_array_equal(encode(x, params, c), x)


def test_attention_permutation_equivariance(rng):
    c = tiny(vocab=(3, 3, 3), n_layers=1, n_heads=2)
    params = init_params(c, table_for(c), 0)
    x = rng.standard_normal((4, 8))
    perm = [0, 1, 3, 2]
    np.testing.assert_allclose(encode(x[perm], params, c), encode(x, params, c)[perm], atol=1e-12)


def test_question_swap_equivariance():
    """Swapping two questions' tokens, positions and heads permutes the logits."""
    c = tiny(vocab=(3, 3, 3))
    params = init_params(c, table_for(c), 0)
    swapped = params.copy()
    A, B = params.arrays, swapped.arrays
    off = c.answer_offsets
    B["tokens.answer"][off[1]:off[1] + 3] = A["tokens.answer"][off[2]:off[2] + 3]
    B["tokens.answer"][off[2]:off[2] + 3] = A["tokens.answer"][off[1]:off[1] + 3]
    B["tokens.question"] = A["tokens.question"][[0, 2, 1]]
    B["tokens.position"] = A["tokens.position"][[0, 1, 3, 2]]
    for part in ("weight", "bias"):
        B[f"head.1.{part}"], B[f"head.2.{part}"] = A[f"head.2.{part}"], A[f"head.1.{part}"]
    base = predict([0, 1, 2], deck(), params, c)
    other = predict([0, 2, 1], deck(), swapped, c)
    np.testing.assert_allclose(other[1], base[2], atol=1e-12)
    np.testing.assert_allclose(other[2], base[1], atol=1e-12)
    np.testing.assert_allclose(other[0], base[0], atol=1e-12)


def test_predict_shapes_and_determinism():
    c = tiny(vocab=(3, 5), use_fusion=True, use_quantum=True, fusion_bands=2)
    params = init_params(c, table_for(c), 0)
    logits = predict([1, 4], deck(), params, c)
    assert [len(lg) for lg in logits] == [3, 5]
    assert all(np.all(np.isfinite(lg)) for lg in logits)
    again = predict([1, 4], deck(), params, c)
    assert all(np.array_equal(a, b) for a, b in zip(logits, again))


def test_predict_batch_matches_single():
    c = tiny()
    params = init_params(c, table_for(c), 0)
    pre = np.array([[0, 1], [2, 3], [1, 0]])
    decks = np.stack([deck(seed=s) for s in range(3)])
    preds, logits = predict_batch(params.arrays, c, pre, decks, batch_size=2)
    for i in range(3):
        single = predict(pre[i], decks[i], params, c)
        for q in range(2):
            np.testing.assert_allclose(logits[q][i], single[q], atol=1e-12)
            assert preds[i, q] == single[q].argmax()


def test_param_shapes_cover_flags():
    c = tiny(use_fusion=True, use_quantum=True, fusion_bands=2)
    names = set(param_shapes(c))
    assert {"fusion.w1", "fusion.b2", "quantum.weight", "quantum.bias"} <= names
    assert param_shapes(c)["tokens.position"] == (4, 8)
