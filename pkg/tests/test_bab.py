import math

import numpy as np
import pytest

from reluverify.bab import (BabConfig, Domain, FullySplit, Status, babsr_choice, babsr_score,
                            batch_split, bound_domain, choose_neuron, domain_filter,
                            fsb_branching, recover_primal, root_domain, run_bab)
from reluverify.bab import _cheap_child_bound
from reluverify.bounds import SplitSet, interval_bounds
from reluverify.checks import calibrated_instance, positive_at_center
from reluverify.model import InputRegion, Network, forward_eval, random_network
from reluverify.optimizer import ParamState
from reluverify.oracle.lp import exact_min

NO_PGD = dict(pgd_steps=0)


def make_domain(net, region, splits=None, lower=-1.0):
    splits = splits or SplitSet.empty(net)
    bounds = interval_bounds(net, region).clamped(splits)
    return Domain(splits, lower, math.inf, ParamState.initial(net), bounds)


# -- branching -----------------------------------------------------------------

def test_single_unstable_selected():
    net = Network([[[1.0], [1.0]], [[1.0, 1.0]]], [[0.0, 5.0], [0.0]])
    dom = make_domain(net, InputRegion([0.0], 1.0))
    assert babsr_choice(net, dom) == (0, 0)
    assert len(babsr_score(net, dom)) == 1


def test_duplicate_neurons_tie_broken_by_index():
    net = Network([[[1.0, -1.0], [1.0, -1.0]], [[-1.0, -1.0]]], [[0.2, 0.2], [0.0]])
    dom = make_domain(net, InputRegion([0.0, 0.0], 1.0))
    scores = babsr_score(net, dom)
    assert scores[0][2:] == scores[1][2:]
    assert babsr_choice(net, dom) == (0, 0)


def test_fully_split_raises():
    net = Network([[[1.0]], [[1.0]]], [[0.0], [0.0]])
    region = InputRegion([0.0], 1.0)
    dom = make_domain(net, region, SplitSet([np.array([1], dtype=np.int8)]))
    with pytest.raises(FullySplit):
        babsr_choice(net, dom)


def test_score_zero_for_nonnegative_coefficient():
    net = Network([[[1.0], [1.0]], [[1.0, -1.0]]], [[0.0, 0.0], [0.0]])
    dom = make_domain(net, InputRegion([0.0], 1.0))
    by_index = {j: s for _, j, s, _ in babsr_score(net, dom)}
    assert by_index[0] == 0.0 and by_index[1] == pytest.approx(0.5)
    assert babsr_choice(net, dom) == (0, 1)


def test_fsb_k1_is_babsr(rng):
    for _ in range(20):
        net = random_network([2, 4, 4, 1], rng)
        region = InputRegion(rng.normal(size=2), 0.8)
        dom = make_domain(net, region)
        try:
            ref = babsr_choice(net, dom)
        except FullySplit:
            continue
        assert fsb_branching(net, region, dom, k=1) == ref


def test_fsb_full_k_is_cheap_lookahead(rng):
    for _ in range(20):
        net = random_network([2, 4, 4, 1], rng)
        region = InputRegion(rng.normal(size=2), 0.8)
        dom = make_domain(net, region)
        try:
            scores = babsr_score(net, dom)
        except FullySplit:
            continue
        if len(scores) < 2:
            continue
        vals = {(h, j): min(_cheap_child_bound(net, region, dom, h, j, s) for s in (1, -1))
                for h, j, _, _ in scores}
        choice = fsb_branching(net, region, dom, k=len(scores))
        assert vals[choice] == max(vals.values())


def test_babsr_agrees_with_lookahead_often():
    rng = np.random.default_rng(0)
    cfg = BabConfig(**NO_PGD)
    agree = trials = 0
    while trials < 100:
        net, region = calibrated_instance(rng)
        root = root_domain(net, region, cfg)
        try:
            scores = babsr_score(net, root)
        except FullySplit:
            continue
        trials += 1
        true = {}
        for h, j, _, _ in scores:
            kids = [bound_domain(net, region, k, cfg, math.inf) for k in batch_split([root], [(h, j)])]
            true[(h, j)] = min(k.lower for k in kids)
        agree += true[babsr_choice(net, root)] >= max(true.values()) - 1e-9
    assert agree >= 60


def test_fsb_branches_no_more_than_babsr_mostly():
    rng = np.random.default_rng(1)
    fewer_or_equal = total = 0
    while total < 30:
        net, region = calibrated_instance(rng)
        a = run_bab(net, region, BabConfig(branching="babsr", **NO_PGD))
        b = run_bab(net, region, BabConfig(branching="fsb", **NO_PGD))
        if a.stats["branches"] == 0:
            continue
        total += 1
        fewer_or_equal += b.stats["branches"] <= a.stats["branches"]
    assert fewer_or_equal > total // 2


# -- splitting and bounding ----------------------------------------------------

def test_batch_split_children(hand_net, unit_box):
    doms = [make_domain(hand_net, unit_box), make_domain(hand_net, unit_box)]
    kids = batch_split(doms, [(0, 1), (0, 0)])
    assert len(kids) == 4
    assert [int(k.splits.status[0][1]) for k in kids[:2]] == [1, -1]
    assert [int(k.splits.status[0][0]) for k in kids[2:]] == [1, -1]
    for k in kids:
        assert k.depth == 1 and k.lower == -1.0
        assert k.params.final.steps == 0
    assert np.all(doms[0].splits.status[0] == 0)


def test_batch_split_rejects_split_neuron(hand_net, unit_box):
    dom = make_domain(hand_net, unit_box, SplitSet.empty(hand_net).with_split(0, 0, 1))
    with pytest.raises(ValueError):
        batch_split([dom], [(0, 0)])


def test_hand_children_bounds(hand_net, unit_box):
    cfg = BabConfig(**NO_PGD)
    root = root_domain(hand_net, unit_box, cfg)
    assert root.lower == pytest.approx(-2.0)
    pos, neg = [bound_domain(hand_net, unit_box, k, cfg, math.inf)
                for k in batch_split([root], [(0, 1)])]
    assert neg.lower == pytest.approx(0.0, abs=1e-9)
    assert pos.lower == pytest.approx(-2.0, abs=1e-9)


def test_filter_rules(hand_net, unit_box):
    a, b, c = (make_domain(hand_net, unit_box, lower=v) for v in (0.3, -0.5, -5.0))
    kept, verified, pruned = domain_filter([a, b, c], global_upper=-1.0)
    assert verified == [a] and pruned == [b] and kept == [c]


def test_child_lower_clamped_to_parent(hand_net, unit_box):
    cfg = BabConfig(**NO_PGD)
    dom = make_domain(hand_net, unit_box, SplitSet.empty(hand_net).with_split(0, 1, 1), lower=-1.5)
    out = bound_domain(hand_net, unit_box, dom, cfg, math.inf)
    assert out.lower >= -1.5


def test_recover_primal(hand_net, unit_box):
    splits = SplitSet([np.array([1, 1], dtype=np.int8)])
    dom = make_domain(hand_net, unit_box, splits)
    x = recover_primal(hand_net, unit_box, dom)
    assert unit_box.contains(x, tol=1e-9)
    z = hand_net.weights[0] @ x
    assert np.all(z >= -1e-9)


def test_recover_primal_empty():
    net = Network([[[1.0], [-1.0]], [[1.0, 1.0]]], [[0.0, -0.5], [0.0]])
    region = InputRegion([0.0], 1.0)
    dom = make_domain(net, region, SplitSet([np.array([1, 1], dtype=np.int8)]))
    assert recover_primal(net, region, dom) is None


def test_infeasible_child_pruned():
    # z1 = x, z2 = -x - 0.5; both active is empty but each bound alone is not crossed
    net = Network([[[1.0], [-1.0]], [[-1.0, -1.0]]], [[0.0, -0.5], [0.0]])
    region = InputRegion([0.0], 1.0)
    dom = make_domain(net, region, SplitSet([np.array([1, 1], dtype=np.int8)]))
    out = bound_domain(net, region, dom, BabConfig(**NO_PGD), target=-0.1)
    kept, verified, pruned = domain_filter([out], -0.1)
    assert not kept


# -- full runs -----------------------------------------------------------------

def test_zero_radius_verified():
    rng = np.random.default_rng(3)
    net = random_network([2, 4, 1], rng)
    x0 = rng.normal(size=2)
    net = Network(net.weights, [net.biases[0], net.biases[1] - forward_eval(net, x0) + 0.5])
    v = run_bab(net, InputRegion(x0, 0.0))
    assert v.status is Status.VERIFIED
    assert v.stats["branches"] == 0


def test_hand_example_falsified(hand_net, unit_box):
    v = run_bab(hand_net, unit_box)
    assert v.status is Status.FALSIFIED
    assert float(forward_eval(hand_net, v.counterexample)) < 0
    np.testing.assert_allclose(v.counterexample, [1.0, -1.0])


def test_hand_example_without_attack(hand_net, unit_box):
    v = run_bab(hand_net, unit_box, BabConfig(**NO_PGD))
    assert v.status is Status.FALSIFIED
    assert float(forward_eval(hand_net, v.counterexample)) == pytest.approx(-2.0)
    assert v.stats["branches"] <= 1


@pytest.mark.parametrize("branching", ["babsr", "fsb"])
def test_matches_exact_oracle(branching):
    rng = np.random.default_rng(11)
    for _ in range(15):
        net, region = calibrated_instance(rng)
        ex, _ = exact_min(net, region)
        v = run_bab(net, region, BabConfig(branching=branching, **NO_PGD))
        assert v.status is (Status.VERIFIED if ex > 0 else Status.FALSIFIED)
        assert v.global_lower <= ex + 1e-6
        if v.status is Status.FALSIFIED:
            assert float(forward_eval(net, v.counterexample)) < 0
            assert region.contains(v.counterexample, tol=1e-12)


def test_lower_history_nondecreasing():
    rng = np.random.default_rng(4)
    for _ in range(10):
        net, region = calibrated_instance(rng)
        v = run_bab(net, region, BabConfig(incomplete=True, max_iterations=30, **NO_PGD))
        h = v.stats["lower_history"]
        assert all(b >= a for a, b in zip(h, h[1:]))


def test_incomplete_bound_is_sound():
    rng = np.random.default_rng(5)
    for _ in range(10):
        net, region = calibrated_instance(rng)
        ex, _ = exact_min(net, region)
        v = run_bab(net, region, BabConfig(incomplete=True, max_iterations=20))
        assert v.global_lower <= ex + 1e-6 <= v.global_upper + 2e-6


def hard_instance():
    """Robust instance (90% of the critical radius) that needs about 75 branches."""
    rng = np.random.default_rng(0)
    net = random_network([3, 8, 8, 1], rng)
    x0 = rng.normal(size=3)
    net = positive_at_center(net, x0)
    return net, InputRegion(x0, 0.9 * 0.74462890625)


def test_timeout_gives_unknown():
    net, region = hard_instance()
    v = run_bab(net, region, BabConfig(timeout=0.0, **NO_PGD))
    assert v.stats["stop_reason"] == "timeout"
    assert v.status is Status.UNKNOWN
    assert math.isfinite(v.global_lower) and v.global_lower < 0
    assert v.stats["branches"] == 0


def test_domain_limit_gives_unknown():
    net, region = hard_instance()
    root = run_bab(net, region, BabConfig(max_iterations=0, **NO_PGD))
    assert root.stats["stop_reason"] == "iteration_limit"
    v = run_bab(net, region, BabConfig(eta=2, **NO_PGD))
    assert v.stats["stop_reason"] == "domain_limit"
    assert v.status is Status.UNKNOWN


def test_injected_clock_timeout():
    net, region = hard_instance()
    ticks = iter(range(10**6))
    v = run_bab(net, region, BabConfig(timeout=3, threads=2, **NO_PGD),
                clock=lambda: float(next(ticks)))
    assert v.stats["stop_reason"] == "timeout"
    assert v.stats["iterations"] <= 3


def test_hard_instance_verified_when_unlimited():
    net, region = hard_instance()
    v = run_bab(net, region, BabConfig(**NO_PGD))
    assert v.status is Status.VERIFIED and v.stats["branches"] > 10
    assert exact_min(net, region)[0] > 0


def test_threads_same_verdict():
    rng = np.random.default_rng(6)
    for _ in range(5):
        net, region = calibrated_instance(rng)
        a = run_bab(net, region, BabConfig(threads=1))
        b = run_bab(net, region, BabConfig(threads=3))
        assert a.status is b.status
        assert a.stats["wall_seconds"] is None and b.stats["wall_seconds"] is not None


def test_deterministic_single_thread():
    rng = np.random.default_rng(7)
    net, region = calibrated_instance(rng)
    a = run_bab(net, region, BabConfig(seed=3))
    b = run_bab(net, region, BabConfig(seed=3))
    assert a.log == b.log and a.stats == b.stats


def test_log_callback_rows(hand_net, unit_box):
    rows = []
    v = run_bab(hand_net, unit_box, BabConfig(**NO_PGD), log=rows.append)
    assert rows == v.log
    assert set(rows[0]) == {"wall_seconds", "domains_live", "domains_visited",
                            "global_lower", "global_upper"}


def test_config_validation():
    with pytest.raises(ValueError):
        BabConfig(batch=0)
    with pytest.raises(ValueError):
        BabConfig(branching="random")
    with pytest.raises(ValueError):
        BabConfig(eta=0)


def test_rejects_vector_output():
    net = Network([np.eye(2)], [np.zeros(2)])
    with pytest.raises(ValueError):
        run_bab(net, InputRegion(np.zeros(2), 1.0))


def test_choose_neuron_dispatch(hand_net, unit_box):
    dom = make_domain(hand_net, unit_box)
    assert choose_neuron(hand_net, unit_box, dom, BabConfig(branching="babsr")) == \
        babsr_choice(hand_net, dom)
    assert choose_neuron(hand_net, unit_box, dom, BabConfig(branching="fsb")) in {(0, 0), (0, 1)}


def _pattern_ok(net, splits, x):
    h = np.asarray(x, dtype=float)
    for i, (w, b) in enumerate(zip(net.weights[:-1], net.biases[:-1])):
        z = w @ h + b
        st = splits.status[i]
        if np.any((st == 1) & (z < 0)) or np.any((st == -1) & (z > 0)):
            return False
        h = np.maximum(z, 0.0)
    return True


def test_children_partition_parent():
    rng = np.random.default_rng(9)
    net, region = calibrated_instance(rng)
    dom = make_domain(net, region)
    leaves = [dom]
    for _ in range(3):
        nxt = []
        for d in leaves:
            try:
                nxt.extend(batch_split([d], [babsr_choice(net, d)]))
            except FullySplit:
                nxt.append(d)
        leaves = nxt
    for x in rng.uniform(region.lower, region.upper, size=(500, 2)):
        assert sum(_pattern_ok(net, d.splits, x) for d in leaves) == 1
