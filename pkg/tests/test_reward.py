import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degrpo.reward import (
    CHANNELS,
    ChannelWeights,
    StructuredResponse,
    Vocabulary,
    VocabularyError,
    channel_sim,
    fine_grained_reward,
    indicator_similarities,
    paired_similarities,
    read_annotations,
    response_similarities,
    reward_logit_jacobian,
    update_channel_weights,
    write_annotations,
)


def f1(p, t):
    p, t = set(p), set(t)
    if not p and not t:
        return 1.0
    tp = len(p & t)
    if tp == 0:
        return 0.0
    prec, rec = tp / len(p), tp / len(t)
    return 2 * prec * rec / (prec + rec)


# ---- channel similarity

@pytest.mark.parametrize("pred,truth,expected", [
    ({"a"}, {"a"}, 1.0),
    ({"a"}, {"b"}, 0.0),
    (set(), set(), 1.0),
    ({"a"}, set(), 0.0),
    ({"a", "b"}, {"a"}, 2 / 3),
    ({"a", "b"}, {"a", "c"}, 0.5),
])
def test_channel_sim_cases(pred, truth, expected):
    assert channel_sim(pred, truth) == pytest.approx(expected, abs=1e-15)


def test_channel_sim_rejects_unknown_token():
    with pytest.raises(VocabularyError, match="zebra"):
        channel_sim({"zebra"}, {"a"}, allowed={"a", "b"})


tokens = st.frozensets(st.sampled_from("abcdefgh"), max_size=8)


@settings(max_examples=200, deadline=None)
@given(tokens, tokens)
def test_channel_sim_bounds_symmetry_and_f1(p, t):
    s = channel_sim(p, t)
    assert 0.0 <= s <= 1.0
    assert s == channel_sim(t, p)
    assert s == pytest.approx(f1(p, t), abs=1e-12)
    assert channel_sim(p, p) == 1.0


# ---- weighted reward

def test_reward_weighted_sum():
    alpha = ChannelWeights.from_weights([0.5, 0.3, 0.2])
    y = StructuredResponse({"a"}, {"happy"}, {"x", "y"})
    truth = StructuredResponse({"a"}, {"sad"}, {"x"})
    np.testing.assert_allclose(response_similarities(y, truth), [1.0, 0.0, 2 / 3])
    y = StructuredResponse({"a"}, {"happy"}, {"x", "y"})
    truth = StructuredResponse({"a"}, {"sad"}, {"x", "z"})
    assert fine_grained_reward(y, truth, alpha) == pytest.approx(0.5 + 0.2 * 0.5, abs=1e-12)


def test_reward_anchor_point_six():
    alpha = ChannelWeights.from_weights([0.5, 0.3, 0.2])
    sims = np.array([1.0, 0.0, 0.5])
    assert float(sims @ alpha.weights) == pytest.approx(0.6, abs=1e-12)


def test_perfect_response_scores_one():
    truth = StructuredResponse({"a", "b"}, {"calm"}, set())
    assert fine_grained_reward(truth, truth, ChannelWeights(np.array([0.3, -1.0, 2.0]))) == pytest.approx(1.0)


def test_reward_rejects_out_of_vocabulary():
    vocab = Vocabulary(("a",), ("calm",), ("x",))
    with pytest.raises(VocabularyError):
        fine_grained_reward(StructuredResponse({"q"}), StructuredResponse({"a"}), ChannelWeights(), vocab)


# ---- channel weights

def test_channel_weights_default_uniform_and_simplex():
    np.testing.assert_allclose(ChannelWeights().weights, 1 / 3)
    w = ChannelWeights(np.array([5.0, -3.0, 0.5])).weights
    assert w.sum() == pytest.approx(1.0, abs=1e-15) and (w > 0).all()


def test_update_channel_weights_one_step():
    alpha = update_channel_weights(ChannelWeights(), [-1.0, 0.0, 0.0], lr=0.1)
    e = np.exp([0.1, 0.0, 0.0])
    np.testing.assert_allclose(alpha.weights, e / e.sum(), atol=1e-15)


def test_channel_weight_validation():
    with pytest.raises(ValueError):
        ChannelWeights(np.array([0.0, np.inf, 0.0]))
    with pytest.raises(ValueError):
        ChannelWeights.from_weights([0.5, 0.5, 0.0])
    with pytest.raises(ValueError):
        update_channel_weights(ChannelWeights(), [1.0, 2.0], lr=0.1)


def test_logit_jacobian_matches_finite_difference():
    alpha = ChannelWeights(np.array([0.2, -0.7, 1.1]))
    jac = reward_logit_jacobian(alpha)
    h = 1e-6
    for j in range(3):
        step = np.zeros(3)
        step[j] = h
        num = (ChannelWeights(alpha.logits + step).weights - ChannelWeights(alpha.logits - step).weights) / (2 * h)
        np.testing.assert_allclose(jac[:, j], num, atol=1e-9)


# ---- vocabulary

def test_full_vocabulary_sizes():
    vocab = Vocabulary.full()
    assert vocab.sizes == (48, 10, 45)
    assert len(vocab) == 103


def test_trimmed_vocabulary():
    vocab = Vocabulary.trimmed(8)
    assert vocab.sizes == (8, 8, 8)
    assert set(vocab.attribute) <= set(Vocabulary.full().attribute)
    rates = vocab.base_rates()
    assert ((rates > 0) & (rates <= 1)).all()


def test_indicator_roundtrip_and_index_error():
    vocab = Vocabulary.trimmed(4)
    r = StructuredResponse({vocab.attribute[1]}, {vocab.emotion[0]}, {vocab.action[3], vocab.action[0]})
    y = r.to_indicator(vocab)
    assert y.sum() == 4
    assert StructuredResponse.from_indicator(y, vocab) == r
    with pytest.raises(VocabularyError):
        vocab.index("action", "not-a-token")
    with pytest.raises(ValueError):
        vocab.channel("colour")


def test_indicator_similarities_agree_with_sets():
    vocab = Vocabulary.trimmed(5)
    rng = np.random.default_rng(0)
    Y = (rng.random((20, len(vocab))) < 0.4).astype(float)
    T = (rng.random((20, len(vocab))) < 0.4).astype(float)
    resp = lambda v: StructuredResponse.from_indicator(v, vocab)
    expected = np.array([response_similarities(resp(y), resp(t)) for y, t in zip(Y, T)])
    np.testing.assert_allclose(paired_similarities(Y, T, vocab), expected, atol=1e-15)
    np.testing.assert_allclose(indicator_similarities(Y, T[0], vocab),
                               [response_similarities(resp(y), resp(T[0])) for y in Y], atol=1e-15)


def test_vocabulary_file_roundtrip(tmp_path):
    vocab = Vocabulary.trimmed(3)
    vocab.save(tmp_path / "v.tsv")
    assert Vocabulary.load(tmp_path / "v.tsv") == vocab
    (tmp_path / "bad.tsv").write_text("colour\tred\n")
    with pytest.raises(ValueError, match="bad.tsv:1"):
        Vocabulary.load(tmp_path / "bad.tsv")


def test_annotation_file_roundtrip(tmp_path):
    vocab = Vocabulary.trimmed(4)
    records = {
        "s0": StructuredResponse({vocab.attribute[0]}, set(), {vocab.action[1]}),
        "s1": StructuredResponse(),
    }
    write_annotations(tmp_path / "a.tsv", records)
    assert read_annotations(tmp_path / "a.tsv", vocab, sample_ids=["s0", "s1"]) == records
    (tmp_path / "bad.tsv").write_text("s0\taction\tzebra\n")
    with pytest.raises(VocabularyError):
        read_annotations(tmp_path / "bad.tsv", vocab)


def test_channel_order():
    assert CHANNELS == ("attribute", "emotion", "action")
