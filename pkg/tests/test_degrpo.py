import math

import numpy as np
import pytest

from degrpo.algorithm import (
    DECAY,
    KEEP,
    REMOVED,
    ConfigError,
    DegenerateSampleError,
    DEGRPOConfig,
    ExhaustedError,
    LearnerState,
    NumericRangeError,
    ObjectiveTerm,
    PreferencePair,
    SampleRecord,
    advantage,
    batch_threshold,
    build_pairs,
    degrpo_step,
    geometric_mean,
    gradient_sensitivity,
    lifecycle_factor,
    objective,
    pair_indices,
    recurrent_update,
    reward_separability,
    sample_objective,
    utility,
)
from degrpo.policy import ToyPolicy, ValueBaseline, kl_divergence
from degrpo.reward import ChannelWeights, StructuredResponse, Vocabulary

LN_HALF = math.log(0.5)


def product_root(values, floor=1e-8):
    v = [max(float(x), floor) for x in values]
    return math.prod(v) ** (1.0 / len(v))


# ---- pairs

def test_pair_counts():
    assert len(pair_indices(np.array([0.1, 0.2, 0.3, 0.4]))[0]) == 6
    assert len(pair_indices(np.full(4, 0.3))[0]) == 0
    w, l = pair_indices(np.array([0.9, 0.1, 0.5, 0.5]))
    assert len(w) == 5
    r = np.array([0.9, 0.1, 0.5, 0.5])
    assert (r[w] > r[l]).all()


def test_build_pairs_orients_winner():
    vocab = Vocabulary(("a", "b"), ("e",), ("c",))
    truth = StructuredResponse({"a", "b"}, {"e"}, {"c"})
    cands = [truth, StructuredResponse({"a"}), StructuredResponse(), StructuredResponse({"b"}, {"e"})]
    pairs = build_pairs(cands, truth, ChannelWeights(), vocab)
    assert pairs and all(p.r_w > p.r_l for p in pairs)
    assert build_pairs([truth] * 4, truth, ChannelWeights(), vocab) == []
    with pytest.raises(ValueError):
        PreferencePair(truth, truth, 0.1, 0.2)


# ---- geometric means

def test_geometric_mean_anchors():
    assert reward_separability(np.array([0.2, 0.8])) == pytest.approx(0.4, abs=1e-15)
    assert reward_separability(np.full(5, 0.37)) == pytest.approx(0.37, abs=1e-15)
    assert gradient_sensitivity(np.array([[1.0, 0.0], [0.0, 4.0]])) == pytest.approx(2.0, abs=1e-15)
    assert gradient_sensitivity(np.zeros((3, 4)), gm_floor=1e-8) == pytest.approx(1e-8, rel=1e-12)
    with pytest.raises(DegenerateSampleError):
        geometric_mean([])


def test_zero_difference_is_floored():
    got = reward_separability(np.array([0.0, 0.5, 0.2]), gm_floor=1e-8)
    assert got == pytest.approx(product_root([1e-8, 0.5, 0.2]), abs=1e-10)
    assert got <= (1e-8) ** (1 / 3) * (0.5 * 0.2) ** (1 / 3) + 1e-15


@pytest.mark.parametrize("seed", range(20))
def test_geometric_mean_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    gaps = rng.random(n)
    assert reward_separability(gaps) == pytest.approx(product_root(gaps), abs=1e-10)
    G = rng.normal(size=(n, 9))
    assert gradient_sensitivity(G) == pytest.approx(product_root(np.linalg.norm(G, axis=1)), abs=1e-10)


def test_gradient_sensitivity_from_pairs():
    r = StructuredResponse()
    pairs = [PreferencePair(r, r, 0.5, 0.1, np.array([1.0, 0.0]), np.zeros(2)),
             PreferencePair(r, r, 0.5, 0.2, np.array([0.0, 4.0]), np.zeros(2))]
    assert gradient_sensitivity(pairs) == pytest.approx(2.0)
    assert reward_separability(pairs) == pytest.approx(math.sqrt(0.4 * 0.3))
    with pytest.raises(ValueError):
        gradient_sensitivity([PreferencePair(r, r, 0.5, 0.1)])


# ---- utility, threshold, recurrence, lifecycle, advantage

def test_utility():
    assert utility(0.4, 2.0) == pytest.approx(0.8)
    assert utility(0.0, 123.0) == 0.0
    assert utility(1.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        utility(-0.1, 1.0)


def test_batch_threshold_lower_median():
    assert batch_threshold([0.9, 0.1, 0.5]) == 0.5
    assert batch_threshold([0.3] * 4) == 0.3
    assert batch_threshold([0.8, 0.2, 0.6, 0.4]) == 0.4
    with pytest.raises(ValueError):
        batch_threshold([])


def test_recurrent_update_anchor_and_strictness():
    assert recurrent_update(0.5, 1.0, 0.5, 0.8) == pytest.approx(0.6, abs=1e-15)
    assert recurrent_update(0.5, 0.5, 0.5, 0.8) == pytest.approx(0.4, abs=1e-15)


def test_recurrence_stays_in_unit_interval():
    rng = np.random.default_rng(0)
    s = 0.5
    for _ in range(1000):
        s = recurrent_update(s, rng.random(), 0.5, 0.8)
        assert 0.0 <= s <= 1.0


def test_lifecycle_factor():
    cfg = DEGRPOConfig()
    assert lifecycle_factor(0.15, cfg) == REMOVED
    assert lifecycle_factor(0.9, cfg) == 0.5
    assert lifecycle_factor(0.5, cfg) == 1.0
    assert lifecycle_factor(0.20, cfg) == REMOVED
    assert lifecycle_factor(0.80, cfg) == 0.5


def test_advantage():
    assert advantage([0.4], 0.1, 0.5) == pytest.approx(0.15, abs=1e-15)
    assert advantage([0.3, 0.5], 0.4, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert advantage([0.3, 0.5], 0.0, 1.0) == pytest.approx(0.4)


def test_config_validation_names_field():
    with pytest.raises(ConfigError, match="lam"):
        DEGRPOConfig(lam=1.0)
    with pytest.raises(ConfigError, match="tau_remove"):
        DEGRPOConfig(tau_remove=0.9, tau_keep=0.8)
    with pytest.raises(ConfigError, match="n_candidates"):
        DEGRPOConfig(n_candidates=3)


# ---- objective

def _vocab():
    return Vocabulary(("a0", "a1", "a2"), ("e0", "e1"), ("c0", "c1", "c2"))


def _policy(seed, scale=0.5):
    return ToyPolicy(_vocab(), 3, init_scale=scale, seed=seed)


def _term(policy, rng, adv=0.3, n_pairs=3):
    x = rng.normal(size=3)
    Y = policy.sample(x, 2 * n_pairs, seed=rng)
    return ObjectiveTerm(x, Y[:n_pairs], Y[n_pairs:], adv, "t")


def test_objective_at_old_policy():
    pol = _policy(0)
    term = _term(pol, np.random.default_rng(1), adv=0.37)
    cfg = DEGRPOConfig(beta=0.0)
    value, _, info = sample_objective(term, pol, pol.snapshot(), pol.snapshot(), cfg)
    np.testing.assert_array_equal(info["delta"], 0.0)
    np.testing.assert_allclose(info["unclipped"], LN_HALF * 0.37, atol=1e-15)
    assert value == pytest.approx(LN_HALF * 0.37, abs=1e-15)


def test_kl_zero_at_reference():
    pol = _policy(0)
    term = _term(pol, np.random.default_rng(1))
    _, _, info = sample_objective(term, pol, _policy(5), pol.snapshot(), DEGRPOConfig())
    assert info["kl"] == 0.0
    assert kl_divergence(pol, pol.snapshot(), term.x) == 0.0


def _one_token_pair(p_cur):
    vocab = Vocabulary(("a",), (), ())
    old, cur = ToyPolicy(vocab, 1, emotion_exclusive=False), ToyPolicy(vocab, 1, emotion_exclusive=False)
    cur.b[:] = math.log(p_cur / (1 - p_cur))
    return cur, old


@pytest.mark.parametrize("adv", [0.7, -0.7])
def test_clip_branch_selection(adv):
    # rho_w = 2p, rho_l = 2 - 2p against p_old = 0.5, so p = 0.625 gives delta = 0.5
    cur, old = _one_token_pair(0.625)
    term = ObjectiveTerm(np.zeros(1), np.ones((1, 1)), np.zeros((1, 1)), adv)
    cfg = DEGRPOConfig(beta=0.0)
    value, grad, info = sample_objective(term, cur, old, old, cfg)
    assert info["delta"][0] == pytest.approx(0.5, abs=1e-15)
    logsig = lambda v: -math.log1p(math.exp(-v))
    if adv > 0:
        assert value == pytest.approx(logsig(0.5) * adv, abs=1e-15)
        assert grad.any()
    else:
        assert value == pytest.approx(logsig(0.8) * adv, abs=1e-15)
        assert not grad.any()


@pytest.mark.parametrize("p", np.linspace(0.7, 0.8, 9))
@pytest.mark.parametrize("adv", [0.4, -0.4])
def test_branches_coincide_inside_clip_range(p, adv):
    cur, old = _one_token_pair(p)
    term = ObjectiveTerm(np.zeros(1), np.ones((1, 1)), np.zeros((1, 1)), adv)
    _, _, info = sample_objective(term, cur, old, old, DEGRPOConfig(beta=0.0))
    assert 0.8 - 1e-12 <= info["delta"][0] <= 1.2 + 1e-12
    assert info["unclipped"][0] == pytest.approx(info["clipped"][0], abs=1e-12)


@pytest.mark.parametrize("kl_sign", ["penalize", "literal"])
def test_objective_gradient_finite_difference(kl_sign):
    rng = np.random.default_rng(4)
    cur, old, ref = _policy(1, 0.6), _policy(2, 0.6), _policy(3, 0.6)
    terms = [_term(old, rng, adv=a) for a in (0.4, -0.2, 0.9)]
    cfg = DEGRPOConfig(beta=0.05, kl_sign=kl_sign, clip_eps=5.0)
    _, g = objective(terms, cur, old, ref, cfg)
    h, num = 1e-6, np.empty_like(cur.theta)
    for i in range(cur.n_params):
        orig = cur.theta[i]
        cur.theta[i] = orig + h
        up = objective(terms, cur, old, ref, cfg)[0]
        cur.theta[i] = orig - h
        down = objective(terms, cur, old, ref, cfg)[0]
        cur.theta[i] = orig
        num[i] = (up - down) / (2 * h)
    scale = max(1.0, np.abs(g).max())
    assert np.max(np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-6 * scale)) <= 1e-4


def test_objective_reports_out_of_range_ratio():
    cur, old = _policy(1), _policy(1)
    cur.b[:] = 800.0
    old.b[:] = -800.0
    x = np.zeros(3)
    Y = np.ones((1, len(cur.vocab)))
    Y[0, cur.vocab.slices()["emotion"]] = [1.0, 0.0]
    with pytest.raises(NumericRangeError, match="pair 0"):
        sample_objective(ObjectiveTerm(x, Y, Y, 1.0, "s7"), cur, old, cur, DEGRPOConfig())


def test_empty_objective():
    pol = _policy(0)
    loss, g = objective([], pol, pol, pol, DEGRPOConfig())
    assert loss == 0.0 and not g.any()


# ---- full step

def _state(xs, truths, lr=0.0, seed=0, cfg=None, W_scale=100.0):
    vocab = _vocab()
    pol = ToyPolicy(vocab, 1, emotion_exclusive=False)
    pol.W[:] = W_scale
    cfg = cfg or DEGRPOConfig()
    records = {f"s{i}": SampleRecord(f"s{i}", np.array([x]), t, s=cfg.s_init) for i, (x, t) in enumerate(zip(xs, truths))}
    return LearnerState(pol, pol.snapshot(), ValueBaseline(1), ChannelWeights(), records, np.random.default_rng(seed))


def test_degenerate_batch_decays_and_does_not_move_policy():
    truth = StructuredResponse({"a0"}, set(), set())
    cfg = DEGRPOConfig(lr_policy=1.0)
    state = _state([1.0, -1.0, 1.0], [truth] * 3, cfg=cfg)
    before = state.policy.theta.copy()
    rep = degrpo_step(state, ["s0", "s1", "s2"], cfg, 0)
    assert all(o.U == 0.0 and o.n_pairs == 0 for o in rep.outcomes)
    assert all(r.s == pytest.approx(0.4) for r in state.records.values())
    np.testing.assert_array_equal(state.policy.theta, before)


def test_always_above_threshold_follows_closed_form():
    truth = StructuredResponse({"a0", "a2"}, {"e1"}, {"c0"})
    cfg = DEGRPOConfig(lr_policy=0.0, tau_remove=0.01, tau_keep=0.99, n_candidates=8)
    state = _state([0.0, 1.0, -1.0], [truth] * 3, cfg=cfg)
    for n in range(1, 13):
        degrpo_step(state, state.active_ids(), cfg, n)
        assert state.records["s0"].history[-1][1] > 0
        assert state.records["s0"].s == pytest.approx(1 - 0.8 ** n * (1 - 0.5), abs=1e-15)
        assert state.records["s1"].s == pytest.approx(0.5 * 0.8 ** n, abs=1e-15)


def test_removed_samples_never_return():
    rng = np.random.default_rng(0)
    vocab = _vocab()
    cfg = DEGRPOConfig(batch_size=8, lr_policy=5.0)
    records = {}
    for i in range(40):
        truth = StructuredResponse.from_indicator((rng.random(len(vocab)) < 0.4).astype(float), vocab)
        records[f"s{i}"] = SampleRecord(f"s{i}", rng.normal(size=3), truth)
    pol = ToyPolicy(vocab, 3)
    state = LearnerState(pol, pol.snapshot(), ValueBaseline(3), ChannelWeights(), records, rng)
    removed, sizes = set(), []
    for it in range(500):
        active = state.active_ids()
        sizes.append(len(active))
        if not active:
            with pytest.raises(ExhaustedError):
                degrpo_step(state, [], cfg, it)
            break
        batch = list(rng.choice(active, size=min(cfg.batch_size, len(active)), replace=False))
        assert removed.isdisjoint(batch)
        rep = degrpo_step(state, batch, cfg, it)
        removed.update(rep.removed)
        assert all(state.records[sid].status == REMOVED for sid in removed)
    assert removed
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    with pytest.raises(ValueError, match="removed"):
        degrpo_step(state, [next(iter(removed))], cfg, 999)


def test_lifecycle_modes_in_outcomes():
    truth = StructuredResponse({"a0"}, set(), {"c1"})
    cfg = DEGRPOConfig(lr_policy=0.0)
    state = _state([0.0, 0.0, 0.0], [truth] * 3, cfg=cfg)
    state.records["s0"].s = 0.95
    state.records["s1"].s = 0.5
    rep = degrpo_step(state, ["s0", "s1"], cfg, 0)
    modes = {o.sample_id: o.delta_mode for o in rep.outcomes}
    assert modes["s0"] == DECAY and modes["s1"] == KEEP


def test_vanilla_skips_utility_and_lifecycle():
    truth = StructuredResponse({"a0"}, set(), {"c1"})
    traces = {}
    for mode in ("de-grpo", "vanilla-grpo"):
        cfg = DEGRPOConfig(lr_policy=0.0)
        state = _state([0.0, 0.0, 0.0], [truth] * 3, cfg=cfg)
        rep = degrpo_step(state, ["s0", "s1", "s2"], cfg, 0, mode=mode)
        traces[mode] = state.trace
        if mode == "vanilla-grpo":
            assert all(o.U is None and o.s is None for o in rep.outcomes)
            assert all(r.s == 0.5 for r in state.records.values())
    diff = set(traces["de-grpo"]) - set(traces["vanilla-grpo"])
    assert diff == {"utility", "recurrent_update", "lifecycle_factor"}
    with pytest.raises(ValueError):
        degrpo_step(state, ["s0"], DEGRPOConfig(), 0, mode="ppo")
