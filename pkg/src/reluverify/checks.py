"""Acceptance checks shared by ``reluverify --mode selftest`` and the test suite.

Every check is deterministic given its seed and returns a :class:`CheckResult`.
``quick=True`` shrinks instance counts so the whole set runs in seconds; the
pass thresholds are the same fractions at both scales.
"""
from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bab import BabConfig, Domain, Status, bound_domain, root_domain, run_bab
from .bounds import (FREE, SplitSet, compute_intermediate_bounds, interval_bounds, propagate,
                     relu_layer_relaxation)
from .model import (InputRegion, Network, forward_eval, merge_specification, random_network, save_network,
                    save_property, Specification, VerificationProperty)
from .optimizer import LayerParams, ParamState, ascend, joint_optimize, stretched_decay
from .oracle.crown_reference import crown_reference
from .oracle.lp import EmptyDomain, exact_min, lp_relaxation_min


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number, name, fn, *args, **kwargs) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn(*args, **kwargs)
    return CheckResult(number, name, bool(passed), detail, time.perf_counter() - t0)


def _n(quick, full, small):
    return small if quick else full


# -- instance generators ------------------------------------------------------

def positive_at_center(net: Network, x0) -> Network:
    """Negate the output layer if needed so that ``f(x0) >= 0``."""
    if forward_eval(net, x0) >= 0:
        return net
    return Network(list(net.weights[:-1]) + [-net.weights[-1]],
                   list(net.biases[:-1]) + [-net.biases[-1]])


def critical_radius(net: Network, x0, steps: int = 12, start: float = 1.0) -> float:
    """Bisection estimate of the largest robust l-inf radius, using the exact oracle."""
    lo, hi = 0.0, start
    while exact_min(net, InputRegion(x0, hi))[0] > 0:
        lo, hi = hi, 2 * hi
        if hi > 64:
            return hi
    for _ in range(steps):
        mid = (lo + hi) / 2
        if exact_min(net, InputRegion(x0, mid))[0] > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def random_splits(net, bounds, rng, max_splits):
    """Split up to ``max_splits`` unstable neurons with random signs."""
    splits = SplitSet.empty(net)
    cands = [(h, int(j)) for h in range(len(bounds)) for j in np.flatnonzero(bounds.unstable_mask(h))]
    if not cands or max_splits == 0:
        return splits
    k = int(rng.integers(0, min(max_splits, len(cands)) + 1))
    for i in rng.choice(len(cands), size=k, replace=False):
        splits = splits.with_split(*cands[i], int(rng.choice([1, -1])))
    return splits


def pattern_splits(net, bounds, x):
    """Split every unstable neuron to the sign it takes at ``x`` (a nonempty full split)."""
    splits = SplitSet.empty(net)
    h_val = np.asarray(x, dtype=np.float64)
    for h in range(len(bounds)):
        z = net.weights[h] @ h_val + net.biases[h]
        for j in np.flatnonzero(bounds.unstable_mask(h)):
            splits.status[h][j] = 1 if z[j] >= 0 else -1
        h_val = np.maximum(z, 0.0)
    return splits


# -- the checks ---------------------------------------------------------------

def check_relaxation_sampling(quick=False, seed=0):
    rng = np.random.default_rng(seed)
    configs = 100
    samples = _n(quick, 10**5, 10**4)
    worst = -math.inf
    violations = 0
    for _ in range(configs):
        n = int(rng.integers(1, 9))
        w = rng.normal(size=n)
        a, b = rng.normal(size=n) * 2, rng.normal(size=n) * 2
        l, u = np.minimum(a, b), np.maximum(a, b)
        alpha = rng.uniform(size=n)
        rc = relu_layer_relaxation(l, u, np.zeros(n, dtype=np.int8), w, alpha)
        v = rng.uniform(l, u, size=(samples, n))
        lhs = np.maximum(v, 0.0) @ w
        rhs = v @ (w * rc.d) + w @ rc.bcheck
        gap = rhs - lhs
        worst = max(worst, float(gap.max()))
        violations += int(np.count_nonzero(gap > 1e-9))
    return violations == 0, f"{violations} violations over {configs}x{samples} samples, worst excess {worst:.2e}"


def check_crown_reduction(quick=False, seed=1):
    rng = np.random.default_rng(seed)
    trials = _n(quick, 100, 20)
    worst, below_ibp = 0.0, 0
    for _ in range(trials):
        depth = int(rng.integers(2, 4))
        dims = [int(rng.integers(2, 5))] + [int(rng.integers(2, 9)) for _ in range(depth)] + [1]
        net = random_network(dims, rng)
        region = InputRegion(rng.normal(size=dims[0]), float(rng.uniform(0.05, 1.0)))
        splits = SplitSet.empty(net)
        for random_alpha in (False, True):
            alphas = [rng.uniform(size=d) if random_alpha else np.ones(d) for d in net.hidden_dims]
            state = ParamState.initial(net)
            for h, (lo, up) in state.inter.items():
                lo.alpha = [a.copy() for a in alphas[:h]]
                up.alpha = [a.copy() for a in alphas[:h]]
            bounds = compute_intermediate_bounds(net, region, splits, state)
            ours = float(propagate(net, bounds, splits, alphas, None, np.ones(1), None, region)[0][0])
            ref = crown_reference(net, region, alphas)
            worst = max(worst, abs(ours - ref))
        _, (ibp_lo, _) = interval_bounds(net, region, with_output=True)
        root = joint_optimize(net, region, splits, ParamState.initial(net), rounds=1)
        if root.bound < float(ibp_lo[0]) - 1e-12:
            below_ibp += 1
    ok = worst <= 1e-12 and below_ibp == 0
    return ok, (f"max |ours - reference| = {worst:.2e} over {2 * trials} runs; optimized bound "
                f"below interval bound on {below_ibp}/{trials}")


def check_weak_duality(quick=False, seed=2):
    rng = np.random.default_rng(seed)
    instances = _n(quick, 50, 10)
    draws = 20
    violations, worst, tested = 0, -math.inf, 0
    for _ in range(instances):
        net = random_network([3, 5, 5, 1], rng)
        region = InputRegion(rng.normal(size=3), float(rng.uniform(0.1, 1.0)))
        base = compute_intermediate_bounds(net, region, SplitSet.empty(net))
        splits = random_splits(net, base, rng, 3)
        bounds = base.clamped(splits)
        try:
            lp = lp_relaxation_min(net, region, bounds, splits)
        except EmptyDomain:
            lp = math.inf
        for _ in range(draws):
            alpha = [rng.uniform(size=d) for d in net.hidden_dims]
            beta = [rng.exponential(size=d) * (s != FREE) for d, s in zip(net.hidden_dims, splits.status)]
            b = float(propagate(net, bounds, splits, alpha, beta, np.ones(1), None, region)[0][0])
            tested += 1
            if math.isfinite(lp):
                worst = max(worst, b - lp)
                violations += b > lp + 1e-6
    return violations == 0, f"{violations} violations in {tested} draws, max bound - LP = {worst:.2e}"


def check_lp_equivalence(quick=False, seed=3):
    rng = np.random.default_rng(seed)
    instances = _n(quick, 50, 10)
    close, negative, worst_neg, done = 0, 0, -math.inf, 0
    while done < instances:
        net = random_network([3, 4, 4, 1], rng)
        region = InputRegion(rng.normal(size=3), float(rng.uniform(0.1, 0.8)))
        base = compute_intermediate_bounds(net, region, SplitSet.empty(net))
        splits = random_splits(net, base, rng, 2)
        bounds = base.clamped(splits)
        try:
            lp = lp_relaxation_min(net, region, bounds, splits)
        except EmptyDomain:
            continue
        done += 1
        res = ascend(net, region, splits, bounds, LayerParams.initial(net.hidden_dims), iters=500,
                     decay=stretched_decay(500))
        gap = lp - res.bound
        close += abs(gap) <= 1e-3 * max(1.0, abs(lp))
        worst_neg = max(worst_neg, -gap)
        negative += gap < -1e-6
    need = math.ceil(0.96 * instances)
    ok = close >= need and negative == 0
    return ok, f"{close}/{instances} within tolerance (need {need}), {negative} above LP, max excess {worst_neg:.2e}"


def check_full_split(quick=False, seed=4):
    rng = np.random.default_rng(seed)
    instances = _n(quick, 30, 8)
    worst, done = 0.0, 0
    while done < instances:
        net = random_network([3, 4, 4, 1], rng)
        region = InputRegion(rng.normal(size=3), float(rng.uniform(0.1, 0.8)))
        base = compute_intermediate_bounds(net, region, SplitSet.empty(net))
        if base.num_unstable() == 0:
            continue
        x = rng.uniform(region.lower, region.upper)
        splits = pattern_splits(net, base, x)
        bounds = base.clamped(splits)
        res = ascend(net, region, splits, bounds, LayerParams.initial(net.hidden_dims))
        lp = lp_relaxation_min(net, region, bounds, splits)
        ex, _ = exact_min(net, region, splits)
        worst = max(worst, abs(res.bound - lp), abs(lp - ex))
        done += 1
    return worst <= 1e-6, f"max discrepancy {worst:.2e} over {instances} fully split instances"


def calibrated_instance(rng, dims=(2, 4, 4, 1)):
    net = random_network(list(dims), rng)
    x0 = rng.normal(size=dims[0])
    net = positive_at_center(net, x0)
    eps = critical_radius(net, x0, steps=8) * float(rng.uniform(0.5, 1.5))
    return net, InputRegion(x0, eps)


def check_completeness(quick=False, seed=5):
    rng = np.random.default_rng(seed)
    instances = _n(quick, 100, 10)
    mismatches, slowest, robust = 0, 0.0, 0
    for _ in range(instances):
        net, region = calibrated_instance(rng)
        ex, _ = exact_min(net, region)
        robust += ex > 0
        for branching in ("babsr", "fsb"):
            t0 = time.perf_counter()
            v = run_bab(net, region, BabConfig(branching=branching, timeout=10.0))
            slowest = max(slowest, time.perf_counter() - t0)
            expected = Status.VERIFIED if ex > 0 else Status.FALSIFIED
            if v.status is not expected:
                mismatches += 1
            elif v.status is Status.FALSIFIED and not forward_eval(net, v.counterexample) < 0:
                mismatches += 1
    ok = mismatches == 0 and slowest < 10.0
    return ok, (f"{mismatches} mismatches over {instances} instances x 2 heuristics "
                f"({robust} robust), slowest run {slowest:.2f}s")


def check_gradients(quick=False, seed=6):
    rng = np.random.default_rng(seed)
    instances = _n(quick, 20, 5)
    h = 1e-5
    worst = 0.0
    for _ in range(instances):
        net = random_network([3, 4, 4, 1], rng)
        region = InputRegion(rng.normal(size=3), float(rng.uniform(0.1, 1.0)))
        base = compute_intermediate_bounds(net, region, SplitSet.empty(net))
        splits = random_splits(net, base, rng, 3)
        bounds = base.clamped(splits)
        alpha = [rng.uniform(0.05, 0.95, size=d) for d in net.hidden_dims]
        beta = [rng.uniform(0.05, 1.0, size=d) * (s != FREE) for d, s in zip(net.hidden_dims, splits.status)]
        _, _, _, ga, gb = propagate(net, bounds, splits, alpha, beta, np.ones(1), None, region,
                                    need_grad=True)

        def value(al, be):
            return float(propagate(net, bounds, splits, al, be, np.ones(1), None, region)[0][0])

        for which, params, grads in (("alpha", alpha, ga), ("beta", beta, gb)):
            for layer in range(len(params)):
                for j in range(params[layer].shape[0]):
                    if which == "beta" and splits.status[layer][j] == FREE:
                        continue
                    plus = [p.copy() for p in params]
                    minus = [p.copy() for p in params]
                    plus[layer][j] += h
                    minus[layer][j] -= h
                    if which == "alpha":
                        fd = (value(plus, beta) - value(minus, beta)) / (2 * h)
                    else:
                        fd = (value(alpha, plus) - value(alpha, minus)) / (2 * h)
                    g = grads[layer][j]
                    scale = max(abs(g), abs(fd))
                    if scale > 1e-8:
                        worst = max(worst, abs(g - fd) / scale)
    return worst <= 1e-4, f"max relative error {worst:.2e} over {instances} instances"


def check_anytime(quick=False, seed=7):
    rng = np.random.default_rng(seed)
    instances = _n(quick, 50, 8)
    budgets = (0.0, 0.05, 0.5, 10.0)
    monotone_fail, improved, eligible = 0, 0, 0
    for _ in range(instances):
        net = random_network([2, 6, 6, 1], rng)
        x0 = rng.normal(size=2)
        net = positive_at_center(net, x0)
        region = InputRegion(x0, float(rng.uniform(0.2, 1.0)))
        lowers = []
        for budget in budgets:
            v = run_bab(net, region, BabConfig(incomplete=True, timeout=budget))
            hist = v.stats["lower_history"]
            if any(b < a for a, b in zip(hist, hist[1:])):
                monotone_fail += 1
            lowers.append(v.global_lower)
        if any(b < a for a, b in zip(lowers, lowers[1:])):
            monotone_fail += 1
        if lowers[0] < 0:
            eligible += 1
            improved += lowers[-1] > lowers[0]
    frac = improved / eligible if eligible else 1.0
    ok = monotone_fail == 0 and frac >= 0.8
    return ok, (f"{monotone_fail} monotonicity failures; final bound beats root on "
                f"{improved}/{eligible} unverified instances")


def check_joint_tightening(quick=False, seed=8):
    rng = np.random.default_rng(seed)
    best = -math.inf
    for _ in range(_n(quick, 200, 50)):
        net = random_network([2, 4, 4, 4, 1], rng)
        region = InputRegion(rng.normal(size=2), float(rng.uniform(0.2, 1.0)))
        splits = SplitSet.empty(net)
        ibp = interval_bounds(net, region)
        lp = lp_relaxation_min(net, region, ibp, splits)
        jr = joint_optimize(net, region, splits, ParamState.initial(net), rounds=2)
        best = max(best, jr.bound - lp)
        if best >= 1e-3:
            break
    return best >= 1e-3, f"joint bound exceeds interval-bound LP by {best:.3e}"


def infeasible_instances(rng, count, dims=(3, 6, 6, 1), config=None, max_tries=5000):
    """Yield ``(net, region, root, splits)`` with splits the triangle LP proves empty."""
    config = config or BabConfig()
    made = 0
    for _ in range(max_tries):
        if made >= count:
            return
        net = random_network(list(dims), rng)
        region = InputRegion(rng.normal(size=dims[0]), 0.5)
        root = root_domain(net, region, config, rng)
        cands = [(h, int(j)) for h in range(len(root.bounds))
                 for j in np.flatnonzero(root.bounds.unstable_mask(h, root.splits))]
        if len(cands) < 2:
            continue
        k = int(rng.integers(2, min(3, len(cands)) + 1))
        splits = root.splits
        for i in rng.choice(len(cands), size=k, replace=False):
            splits = splits.with_split(*cands[i], int(rng.choice([1, -1])))
        try:
            lp_relaxation_min(net, region, root.bounds.clamped(splits), splits)
            continue
        except EmptyDomain:
            pass
        made += 1
        yield net, region, root, splits


def check_infeasibility_pruning(quick=False, seed=9):
    rng = np.random.default_rng(seed)
    instances = _n(quick, 50, 10)
    config = BabConfig()
    pruned, total, unsound = 0, 0, 0
    for net, region, root, splits in infeasible_instances(rng, instances, config=config):
        total += 1
        params = root.params.copy(moments=False)
        params.final.reset_moments()
        dom = Domain(splits, root.lower, math.inf, params, root.bounds.clamped(splits),
                     splits.num_splits)
        dom = bound_domain(net, region, dom, config, root.upper)
        if dom.lower > root.upper:
            pruned += 1
            continue
        # kept domains stay in the queue; the full run must still reach the right verdict
        ex, _ = exact_min(net, region)
        v = run_bab(net, region, config)
        if v.global_lower > ex + 1e-9 or v.status is not (Status.VERIFIED if ex > 0 else Status.FALSIFIED):
            unsound += 1
    frac = pruned / total if total else 0.0
    ok = total == instances and frac >= 0.9 and unsound == 0
    return ok, f"pruned {pruned}/{total} empty subdomains ({frac:.0%}), {unsound} unsound verdicts on the rest"


def check_determinism(quick=False, seed=12):
    from . import cli

    rng = np.random.default_rng(seed)
    net = random_network([2, 6, 6, 3], rng)
    x0 = rng.normal(size=2)
    raw = forward_eval(net, x0)
    label = int(np.argmax(raw))
    rows = [np.eye(3)[label] - np.eye(3)[k] for k in range(3) if k != label]
    # just inside the exact robustness radius, so the verifier has to branch
    eps = 0.95 * min(critical_radius(merge_specification(net, r), x0) for r in rows)
    prop = VerificationProperty(InputRegion(x0, eps), Specification(np.array(rows)))
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        save_network(net, tmp / "model.json")
        save_property(prop, tmp / "prop.json")
        outputs = []
        codes = []
        for run in range(2):
            rep, log = tmp / f"report{run}.json", tmp / f"log{run}.csv"
            codes.append(cli.main(["--model", str(tmp / "model.json"), "--property", str(tmp / "prop.json"),
                                   "--mode", "verify", "--seed", "7", "--threads", "1",
                                   "--report", str(rep), "--log", str(log)]))
            logs = sorted(tmp.glob(f"log{run}*.csv"))
            outputs.append((rep.read_bytes(), [p.read_bytes() for p in logs]))
        report = json.loads(outputs[0][0])
    same = outputs[0] == outputs[1] and codes[0] == codes[1]
    branches = sum(r["branches"] or 0 for r in report["rows"])
    return same, f"reports and {len(outputs[0][1])} logs identical: {same}; exit {codes[0]}, {branches} branches"


CHECKS = [
    (1, "relaxation sampling", check_relaxation_sampling),
    (2, "CROWN reduction", check_crown_reduction),
    (3, "weak duality", check_weak_duality),
    (4, "LP equivalence", check_lp_equivalence),
    (5, "full-split exactness", check_full_split),
    (6, "completeness", check_completeness),
    (7, "gradient check", check_gradients),
    (8, "anytime improvement", check_anytime),
    (9, "joint tightening", check_joint_tightening),
    (10, "infeasibility pruning", check_infeasibility_pruning),
    (11, "determinism", check_determinism),
]


def run_check(number: int, quick: bool = False, seed: int | None = None) -> CheckResult:
    num, name, fn = CHECKS[number - 1]
    kwargs = {"quick": quick}
    if seed is not None:
        kwargs["seed"] = seed + num
    return _timed(num, name, fn, **kwargs)


def run_all(quick: bool = True, seed: int | None = None) -> list:
    return [run_check(num, quick, seed) for num, _, _ in CHECKS]
