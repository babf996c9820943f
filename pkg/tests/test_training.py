import math

import numpy as np
import pytest

from opinionxf import training
from opinionxf.dataset import build_vocabulary, default_generator_config, generate_synthetic, split
from opinionxf.embeddings import Embedder, init_answer_table
from opinionxf.errors import ConfigError, NumericError, TrainingFailure, VocabularyError
from opinionxf.fusion import fusion_summaries
from opinionxf.model import as_tensors, init_params
from opinionxf.numerics import Tensor
from opinionxf.training import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adamw_step,
    clip_gradients,
    cosine_alignment_loss,
    cosine_anneal_lr,
    cross_entropy_total,
    encode_dataset,
    evaluate_loss,
    global_norm,
    in_batch_contrastive_loss,
    load_checkpoint,
    loss_and_grads,
    model_config_for,
    total_loss,
    train,
)

SMALL_MODEL = dict(d_model=16, n_layers=1, n_heads=2, d_ff=32)


@pytest.fixture(scope="module")
def corpus():
    cfg = default_generator_config(80, seed=4)
    records = generate_synthetic(cfg)
    return records, cfg.decks(), Embedder(32), build_vocabulary(records)


def small_run(corpus, epochs=2, variant=None, **train_kw):
    records, decks, emb, vocab = corpus
    flags = variant or {}
    mc = model_config_for(vocab, emb.dim, **SMALL_MODEL, fusion_bands=4, seed=1, **flags)
    tc = TrainConfig(epochs=epochs, batch_size=16, seed=1, **train_kw)
    return train(split(records, 0.8, 1), decks, tc, mc, embedder=emb, vocab=vocab)


# --- losses ----------------------------------------------------------------

def test_ce_confident_is_zero():
    logits = [Tensor(np.array([[30.0, 0, 0]])), Tensor(np.array([[0, 0, 30.0, 0]]))]
    assert cross_entropy_total(logits, [[0, 2]]).item() <= 1e-6 * 2


def test_ce_uniform_closed_form():
    logits = [Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4)))]
    assert cross_entropy_total(logits, np.zeros((3, 2), int)).item() == pytest.approx(2 * math.log(4))


def test_ce_bad_target():
    with pytest.raises(VocabularyError):
        cross_entropy_total([Tensor(np.zeros((1, 3)))], [[3]])


def test_ce_nonnegative(rng):
    logits = [Tensor(rng.standard_normal((5, 3)) * 10)]
    assert cross_entropy_total(logits, rng.integers(0, 3, size=(5, 1))).item() >= 0


def test_alignment_examples():
    one = np.array([[1.0, 0.0]])
    assert cosine_alignment_loss(Tensor(one), Tensor(one)).item() == pytest.approx(0.0, abs=1e-15)
    assert cosine_alignment_loss(Tensor(one), Tensor(-one)).item() == pytest.approx(2.0)
    assert cosine_alignment_loss(Tensor(one), Tensor([[1.0, 1.0]])).item() == pytest.approx(1 - 1 / math.sqrt(2))
    assert cosine_alignment_loss(Tensor([[0.0, 0.0]]), Tensor(one)).item() == 1.0


def test_in_batch_loss_prefers_matches(rng):
    u = rng.standard_normal((4, 6))
    matched = in_batch_contrastive_loss(Tensor(u), Tensor(u)).item()
    shuffled = in_batch_contrastive_loss(Tensor(u), Tensor(u[[1, 2, 3, 0]])).item()
    assert matched < shuffled


def tiny_setup(flags, contrastive=0.0):
    from opinionxf.verify import tiny_setup as setup
    config, trainable, arrays, pre, post, decks = setup(flags)
    return config, trainable, arrays, pre, post, decks, TrainConfig(contrastive_weight=contrastive)


def test_total_loss_lambda_zero_is_ce():
    config, _, arrays, pre, post, decks, tc = tiny_setup("quantum", 0.0)
    loss, out = total_loss(as_tensors(arrays), config, tc, pre, post, decks)
    assert loss.item() == cross_entropy_total(out.logits, post).item()


def test_total_loss_lambda_one_by_hand():
    config, _, arrays, pre, post, decks, tc = tiny_setup("quantum", 1.0)
    pre, post, decks = pre[:1], post[:1], decks[:1]
    loss, out = total_loss(as_tensors(arrays), config, tc, pre, post, decks)
    u = out.fused_p.data[0]
    v = out.augmented_q.data[0].mean(axis=0)
    align = 1 - u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
    assert loss.item() == pytest.approx(cross_entropy_total(out.logits, post).item() + align, abs=1e-9)
    assert loss.item() >= 0


def test_alignment_only_with_fusion():
    config, _, arrays, pre, post, decks, tc = tiny_setup("base", 1.0)
    config.use_contrastive = True
    loss, out = total_loss(as_tensors(arrays), config, tc, pre, post, decks)
    assert loss.item() == cross_entropy_total(out.logits, post).item()


# --- optimiser -------------------------------------------------------------

def test_clip_examples():
    g = {"a": np.array([0.3, 0.4])}
    clipped, norm = clip_gradients(g, 1.0)
    np.testing.assert_array_equal(clipped["a"], g["a"])
    clipped, norm = clip_gradients({"a": np.array([3.0, 4.0])}, 1.0)
    np.testing.assert_allclose(clipped["a"], [0.6, 0.8])
    assert norm == 5.0


def test_clip_bound_and_nonfinite(rng):
    for _ in range(20):
        g = {k: rng.standard_normal(rng.integers(1, 5)) * rng.uniform(0, 10) for k in "abc"}
        assert global_norm(clip_gradients(g, 1.0)[0]) <= 1.0 + 1e-9
    with pytest.raises(NumericError):
        clip_gradients({"a": np.array([np.nan])})


def test_adamw_examples():
    p = {"w": np.array([1.0])}
    adamw_step(p, {"w": np.zeros(1)}, AdamState(), 1, 2e-3, weight_decay=0.0)
    assert p["w"][0] == 1.0
    adamw_step(p, {"w": np.zeros(1)}, AdamState(), 1, 2e-3, weight_decay=1e-4)
    assert p["w"][0] == pytest.approx(1 - 2e-7, abs=1e-15)
    q = {"w": np.array([0.0])}
    adamw_step(q, {"w": np.ones(1)}, AdamState(), 1, 2e-3)
    assert q["w"][0] == pytest.approx(-2e-3 / (1 + 1e-8), abs=1e-15)
    with pytest.raises(ConfigError):
        adamw_step(q, {"w": np.ones(1)}, AdamState(), 0, 2e-3)


def test_cosine_schedule():
    assert cosine_anneal_lr(0, 100, 2e-3) == 2e-3
    assert cosine_anneal_lr(100, 100, 2e-3, 1e-4) == pytest.approx(1e-4)
    assert cosine_anneal_lr(50, 100, 2e-3, 1e-4) == pytest.approx((2e-3 + 1e-4) / 2)
    with pytest.raises(ConfigError):
        cosine_anneal_lr(0, 0, 1e-3)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr_max=1e-3, lr_min=1e-3)
    with pytest.raises(ConfigError):
        TrainConfig(clip_norm=0)
    assert TrainConfig().resolved_batch_size(type("C", (), {"use_quantum": True})) == 32
    assert TrainConfig().resolved_batch_size(type("C", (), {"use_quantum": False})) == 64


def test_first_order_step():
    config, trainable, arrays, pre, post, decks, tc = tiny_setup("fusion", 0.0)
    loss0, grads = loss_and_grads(arrays, trainable, config, tc, pre, post, decks)
    clipped, _ = clip_gradients(grads, tc.clip_norm)
    before = {k: v.copy() for k, v in arrays.items()}
    adamw_step(arrays, clipped, AdamState(), 1, 1e-5, tc.weight_decay)
    loss1, _ = loss_and_grads(arrays, trainable, config, tc, pre, post, decks)
    predicted = sum(float(np.sum(grads[k] * (arrays[k] - before[k]))) for k in trainable)
    assert abs((loss1 - loss0) - predicted) / abs(predicted) < 0.1


# --- loop ------------------------------------------------------------------

def test_overfit_sixteen_records():
    cfg = default_generator_config(16, seed=8)
    records = generate_synthetic(cfg)
    emb = Embedder(384)
    vocab = build_vocabulary(records)
    mc = model_config_for(vocab, emb.dim, seed=0)
    tc = TrainConfig(contrastive_weight=0.0)
    data = encode_dataset(records, vocab, cfg.decks(), emb.deck_vectors(cfg.decks()))
    params = init_params(mc, init_answer_table(vocab, emb.answer))
    arrays, trainable, state = params.arrays, params.trainable_names(mc), AdamState()
    for step in range(1, 301):
        loss, grads = loss_and_grads(arrays, trainable, mc, tc, data.pre, data.post, data.decks)
        if loss < 0.05:
            break
        adamw_step(arrays, clip_gradients(grads)[0], state, step, tc.lr_max, tc.weight_decay)
    assert loss < 0.05


def test_train_deterministic_and_checkpoint_is_min(corpus, tmp_path):
    ck1, h1 = small_run(corpus, epochs=3)
    ck2, h2 = small_run(corpus, epochs=3)
    assert h1.rows() == h2.rows()
    assert len(h1) == 3
    assert ck1.val_loss == pytest.approx(min(h1.val_loss), abs=1e-12)
    assert ck1.epoch == int(np.argmin(h1.val_loss)) + 1
    h1.to_csv(tmp_path / "a.csv")
    h2.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert TrainHistory.from_csv(tmp_path / "a.csv").rows() == h1.rows()


def test_checkpoint_roundtrip_reproduces_val_loss(corpus, tmp_path):
    records, decks, emb, vocab = corpus
    ck, _ = small_run(corpus, epochs=2, variant={"use_fusion": True, "use_quantum": True,
                                                  "use_contrastive": True})
    ck.save(tmp_path / "c.npz")
    loaded = load_checkpoint(tmp_path / "c.npz")
    sp = split(records, 0.8, 1)
    tc = TrainConfig(**{k: v for k, v in loaded.train_config.items()})
    val = evaluate_loss(loaded.params.arrays, loaded.model_config, tc, loaded.encode(sp.validation))
    assert abs(val - ck.val_loss) < 1e-6
    assert loaded.model_config == ck.model_config
    data = loaded.encode(sp.validation)
    np.testing.assert_array_equal(loaded.predict_ids(data), ck.predict_ids(data))


def test_threaded_mode_is_deterministic(corpus):
    a = small_run(corpus, epochs=2, threads=2)[1]
    b = small_run(corpus, epochs=2, threads=2)[1]
    serial = small_run(corpus, epochs=2)[1]
    assert a.rows() == b.rows()
    np.testing.assert_allclose(a.train_loss, serial.train_loss, rtol=1e-8)


def test_nan_loss_raises_training_failure(corpus, monkeypatch):
    def broken(*args, **kwargs):
        return float("nan"), {}

    monkeypatch.setattr(training, "loss_and_grads", broken)
    with pytest.raises(TrainingFailure) as info:
        small_run(corpus, epochs=1)
    assert info.value.epoch == 1 and info.value.step == 0


def test_variants_train_without_nan(corpus):
    for flags in ({"use_fusion": True}, {"use_fusion": True, "use_quantum": True, "use_contrastive": True}):
        ck, hist = small_run(corpus, epochs=2, variant=flags, debug=True)
        assert np.all(np.isfinite(hist.train_loss)) and np.all(np.isfinite(hist.val_loss))


def test_empty_split_rejected(corpus):
    records, decks, emb, vocab = corpus
    mc = model_config_for(vocab, emb.dim, **SMALL_MODEL)
    with pytest.raises(ConfigError):
        train(type("S", (), {"train": records, "validation": []})(), decks, TrainConfig(), mc,
              embedder=emb, vocab=vocab)


def test_fusion_summaries_used_in_loss():
    config, _, arrays, pre, post, decks, tc = tiny_setup("quantum", 0.0)
    _, out = total_loss(as_tensors(arrays), config, tc, pre, post, decks)
    u, v = fusion_summaries(out.fused_p, out.augmented_q)
    assert u.shape == v.shape == (len(pre), config.d_model)


def test_published_training_defaults():
    tc = TrainConfig()
    assert (tc.lr_max, tc.weight_decay, tc.clip_norm) == (2e-3, 1e-4, 1.0)
    assert 20 <= tc.epochs <= 100
