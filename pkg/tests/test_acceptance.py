"""Acceptance suite: one test per primary criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
Statistical criteria (the benchmark tables) use the shipped configs; seeds and
horizons are fixed there, so results are reproducible.
"""

import functools
import time

import numpy as np
from scipy.linalg import expm

from robustkf.basis import (
    build_basis,
    build_quadratic_basis,
    build_quadrature,
    point_mass_rule,
    product_in_quadratic_basis,
)
from robustkf.cdfilter import (
    build_galerkin,
    cd_step,
    integrate_pce,
    lift,
    nominal_hybrid_step,
    reconstruct_prior,
)
from robustkf.cli import resolve_config_text
from robustkf.configio import build_experiment, parse_config
from robustkf.dtfilter import (
    GaussianBelief,
    build_dt_tables,
    dt_propagate,
    kalman_update,
    nominal_kf_step,
)
from robustkf.harness import run_ensemble, simulate_truth_ct, simulate_truth_dt

DT_BENCH = parse_config(resolve_config_text("benchmark_dt"))
CT_BENCH = parse_config(resolve_config_text("benchmark_ct"))
DT_SYS = DT_BENCH.system
CT_SYS = CT_BENCH.system


def criterion(name, budget_s):
    """Wrap a criterion body; print one PASS/FAIL line with elapsed time."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper():
            start = time.perf_counter()
            try:
                detail = fn()
            except BaseException as exc:
                elapsed = time.perf_counter() - start
                print(f"FAIL {name} [{elapsed:.1f}s]: {exc}")
                raise
            elapsed = time.perf_counter() - start
            assert elapsed < budget_s, f"{name}: runtime {elapsed:.1f}s exceeds {budget_s}s"
            print(f"PASS {name} [{elapsed:.1f}s]: {detail}")

        return wrapper

    return deco


@criterion("reduction oracle (point-mass = nominal, both benchmarks)", 1.0)
def test_reduction_oracle():
    worst = 0.0
    # discrete benchmark
    tables = build_dt_tables(DT_SYS, point_mass_rule([0.0]))
    _, meas = simulate_truth_dt(DT_SYS, np.zeros(1), 2024, 100, np.zeros(2))
    robust = GaussianBelief(np.zeros(2), np.eye(2))
    nominal = GaussianBelief(np.zeros(2), np.eye(2))
    for k in range(100):
        robust = kalman_update(dt_propagate(tables, robust), meas[k], DT_SYS.C, DT_SYS.R)
        nominal = nominal_kf_step(DT_SYS, nominal, meas[k])
        worst = max(worst, np.max(np.abs(robust.mean - nominal.mean)),
                    np.max(np.abs(robust.cov - nominal.cov)))
    # hybrid benchmark
    basis = build_basis(CT_SYS.delta_dist, 0)
    ops = build_galerkin(CT_SYS, basis, build_quadratic_basis(basis), point_mass_rule([0.0]))
    a0 = CT_SYS.A(np.zeros(1))
    b0 = CT_SYS.B(np.zeros(1))
    bqb0 = b0 @ CT_SYS.Q @ b0.T
    _, measc = simulate_truth_ct(CT_SYS, np.zeros(1), 2024, 100, np.array([3.0, 3.0]))
    robust = GaussianBelief(np.array([3.0, 3.0]), np.eye(2))
    nominal = GaussianBelief(np.array([3.0, 3.0]), np.eye(2))
    for k in range(100):
        robust = cd_step(ops, robust, measc[k], 0.1, 10, CT_SYS.C, CT_SYS.R)
        nominal = nominal_hybrid_step(a0, bqb0, nominal, measc[k], 0.1, 10, CT_SYS.C, CT_SYS.R)
        worst = max(worst, np.max(np.abs(robust.mean - nominal.mean)),
                    np.max(np.abs(robust.cov - nominal.cov)))
    assert worst < 1e-8, f"max deviation {worst:.2e} over 100 steps"
    return f"max deviation {worst:.2e} over 100 steps on both benchmarks"


@criterion("discrete propagation vs 1e6-sample Monte Carlo", 30.0)
def test_dt_propagation_oracle():
    tables = build_dt_tables(DT_SYS)
    post = GaussianBelief(np.array([1.0, -0.5]), np.array([[2.0, 0.3], [0.3, 1.0]]))
    prior = dt_propagate(tables, post)
    rng = np.random.default_rng(20_240_501)
    deltas = rng.uniform(-0.3, 0.3, size=1_000_000)
    a = np.zeros((deltas.size, 2, 2))
    a[:, 0, 1] = -0.5
    a[:, 1, 0] = 1.0
    a[:, 1, 1] = 1.0 + deltas
    b0 = DT_SYS.B(np.zeros(1))
    abar = np.array([[0.0, -0.5], [1.0, 1.0]])
    mu_outer = np.outer(post.mean, post.mean)
    samples = (
        np.einsum("qij,jk,qlk->qil", a, post.cov, a)
        + (b0 @ DT_SYS.Q @ b0.T)[None]
        + np.einsum("qij,jk,qlk->qil", a - abar, mu_outer, a - abar)
    )
    mc_mean = samples.mean(axis=0)
    mc_se = samples.std(axis=0) / np.sqrt(deltas.size)
    gap = np.abs(prior.cov - mc_mean)
    assert np.all(gap <= 3 * mc_se + 1e-12), f"gap {gap} vs 3*SE {3 * mc_se}"
    # closed-form check of the parameter-variance term: Var(d) (mu_2)^2 e2 e2^T
    text = resolve_config_text("benchmark_dt").replace("Q = [[1.0]]", "Q = [[0.0]]")
    sys_q0 = parse_config(text).system
    tables_q0 = build_dt_tables(sys_q0)
    mu2 = 1.7
    got = dt_propagate(tables_q0, GaussianBelief(np.array([0.0, mu2]), np.zeros((2, 2)))).cov
    want = np.array([[0.0, 0.0], [0.0, 0.03 * mu2**2]])
    assert np.max(np.abs(got - want)) < 1e-12, f"closed-form term off by {got - want}"
    return (
        f"all entries within 3 SE (max gap {gap.max():.2e}); "
        f"closed-form term exact to {np.max(np.abs(got - want)):.1e}"
    )


@criterion("hybrid conditional-mean fidelity and monotonicity in order", 10.0)
def test_ct_conditional_fidelity():
    mu0 = np.array([3.0, 3.0])
    basis4 = build_basis(CT_SYS.delta_dist, 4)
    qb4 = build_quadratic_basis(basis4)
    rule = build_quadrature(CT_SYS.delta_dist, 18)
    exact = {tuple(node): expm(CT_SYS.A(node)) @ mu0 for node in rule.nodes}
    errors = []
    for order in (1, 2, 3, 4):
        basis = build_basis(CT_SYS.delta_dist, order)
        ops = build_galerkin(CT_SYS, basis, build_quadratic_basis(basis))
        state = lift(GaussianBelief(mu0, np.zeros((2, 2))), ops)
        out = integrate_pce(ops, state, 1.0, 100)
        coeff = out.mu.reshape(ops.num_phi, 2)
        err = max(
            np.max(np.abs(basis.evaluate(node[None, :]).ravel() @ coeff - exact[tuple(node)]))
            for node in rule.nodes
        )
        errors.append(err)
    assert errors[-1] < 1e-6, f"order-4 node error {errors[-1]:.2e}"
    assert all(errors[i] > errors[i + 1] for i in range(3)), f"not monotone: {errors}"
    del qb4
    return "errors over orders 1..4: " + ", ".join(f"{e:.2e}" for e in errors)


@criterion("hybrid total-covariance vs two-level Monte Carlo", 120.0)
def test_ct_total_fidelity():
    mu0 = np.array([3.0, 3.0])
    sig0 = np.eye(2)
    basis = build_basis(CT_SYS.delta_dist, 4)
    ops = build_galerkin(CT_SYS, basis, build_quadratic_basis(basis))
    state = integrate_pce(ops, lift(GaussianBelief(mu0, sig0), ops), 1.0, 100)
    prior = reconstruct_prior(ops, state)
    rng = np.random.default_rng(88)
    draws = rng.uniform(-0.95, 0.95, size=100_000)
    cond_means = np.empty((draws.size, 2))
    cond_cov_sum = np.zeros((2, 2))
    aug = np.zeros((4, 4))
    for i, d in enumerate(draws):
        a = CT_SYS.A(np.array([d]))
        b = CT_SYS.B(np.array([d]))
        aug[:2, :2] = a
        aug[:2, 2:] = b @ CT_SYS.Q @ b.T
        aug[2:, 2:] = -a.T
        top = expm(aug)[:2, :]
        phi = top[:, :2]
        qd = top[:, 2:] @ phi.T
        cond_means[i] = phi @ mu0
        cond_cov_sum += phi @ sig0 @ phi.T + 0.5 * (qd + qd.T)
    mc_cov = cond_cov_sum / draws.size + np.cov(cond_means.T, bias=True)
    mask = np.abs(mc_cov) > 1e-6
    rel = np.abs(prior.cov - mc_cov)[mask] / np.abs(mc_cov)[mask]
    assert np.all(rel < 0.01), f"relative errors {rel}"
    return f"max relative covariance error {rel.max():.2%} over {mask.sum()} entries"


@criterion("discrete benchmark table (orderings, factor, bands)", 120.0)
def test_table_dt():
    results = {}
    for case in ("I", "II"):
        cfg = build_experiment(DT_BENCH, case=case)
        table, _ = run_ensemble(cfg, DT_SYS)
        results[case] = table
        for state in ("x1", "x2"):
            rob = table.row("robust", state).mean_abs_err
            nom = table.row("nominal", state).mean_abs_err
            assert rob < nom, f"case {case} {state}: robust {rob:.3f} >= nominal {nom:.3f}"
    ratio = (
        results["II"].row("nominal", "x2").mean_abs_err
        / results["II"].row("robust", "x2").mean_abs_err
    )
    assert ratio >= 2.0, f"case II x2 improvement factor {ratio:.2f} < 2"
    bands = {
        ("I", "x1"): 0.3182, ("I", "x2"): 3.1846,
        ("II", "x1"): 0.5666, ("II", "x2"): 5.6669,
    }
    for (case, state), center in bands.items():
        got = results[case].row("robust", state).mean_abs_err
        assert 0.5 * center <= got <= 1.5 * center, (
            f"case {case} {state}: robust mean {got:.4f} outside +-50% of {center}"
        )
    summary = "; ".join(
        f"{case}/{state}: rob {results[case].row('robust', state).mean_abs_err:.3f} "
        f"nom {results[case].row('nominal', state).mean_abs_err:.3f}"
        for case in ("I", "II") for state in ("x1", "x2")
    )
    return f"x2 factor {ratio:.2f}; {summary}"


@criterion("hybrid benchmark table (orderings, SD factor)", 300.0)
def test_table_ct():
    results = {}
    for case in ("I", "II"):
        cfg = build_experiment(CT_BENCH, case=case)
        table, _ = run_ensemble(cfg, CT_SYS)
        results[case] = table
        for state in ("x1", "x2"):
            rob = table.row("robust", state)
            nom = table.row("nominal", state)
            assert rob.mean_abs_err <= nom.mean_abs_err, (
                f"case {case} {state}: robust mean {rob.mean_abs_err:.4f} > "
                f"nominal {nom.mean_abs_err:.4f}"
            )
            assert rob.sd_abs_err <= nom.sd_abs_err, (
                f"case {case} {state}: robust SD {rob.sd_abs_err:.4f} > "
                f"nominal {nom.sd_abs_err:.4f}"
            )
    factors = [
        results["II"].row("nominal", state).sd_abs_err
        / results["II"].row("robust", state).sd_abs_err
        for state in ("x1", "x2")
    ]
    assert min(factors) >= 1.5, f"case II SD improvement factors {factors} below 1.5"
    return (
        f"case II SD factors {factors[0]:.2f}/{factors[1]:.2f}; case I robust mean "
        f"{results['I'].row('robust', 'x1').mean_abs_err:.4f}"
    )


@criterion("property suite (orthogonality, completeness, exactness, PSD, "
           "monotonicity, determinism)", 60.0)
def test_property_suite():
    checks = []
    # basis orthogonality on both benchmark distributions
    for dist, order in ((DT_SYS.delta_dist, 4), (CT_SYS.delta_dist, 4)):
        basis = build_basis(dist, order)
        rule = build_quadrature(dist, 2 * order + 2)
        vals = basis.evaluate(rule.nodes)
        gram = (vals.T * rule.weights) @ vals
        scale = np.sqrt(np.outer(basis.norms, basis.norms))
        off = np.max(np.abs((gram - np.diag(np.diag(gram))) / scale))
        assert off < 1e-10, f"orthogonality violation {off:.2e}"
        checks.append(f"orth {off:.1e}")
        # quadratic completeness
        qb = build_quadratic_basis(basis)
        worst = max(
            product_in_quadratic_basis(qb, i, j, rule)[1]
            for i in range(basis.count) for j in range(i, basis.count)
        )
        assert worst < 1e-10, f"completeness residual {worst:.2e}"
        checks.append(f"compl {worst:.1e}")
    # quadrature exactness against closed-form uniform moments
    rule = build_quadrature(CT_SYS.delta_dist, 9)
    for k in range(0, rule.exactness_degree + 1, 2):
        exact = 0.95**k / (k + 1)
        got = float(rule.weights @ rule.nodes[:, 0] ** k)
        assert abs(got - exact) <= 1e-12 * max(exact, 1.0), f"moment {k} off"
    checks.append("exactness ok")
    # PSD preservation along a hybrid run + update monotonicity
    basis = build_basis(CT_SYS.delta_dist, 4)
    ops = build_galerkin(CT_SYS, basis, build_quadratic_basis(basis))
    _, meas = simulate_truth_ct(CT_SYS, np.array([0.9]), 31, 40, np.array([3.0, 3.0]))
    belief = GaussianBelief(np.zeros(2), np.eye(2))
    for k in range(40):
        state = integrate_pce(ops, lift(belief, ops), 0.1, 10)
        prior = reconstruct_prior(ops, state)
        eigmin = np.linalg.eigvalsh(prior.cov).min()
        assert eigmin >= -1e-8 * np.trace(prior.cov), f"PSD violation {eigmin:.2e}"
        belief = kalman_update(prior, meas[k], CT_SYS.C, CT_SYS.R)
        assert np.trace(belief.cov) <= np.trace(prior.cov) * (1 + 1e-12)
    checks.append("psd+monotone ok")
    # determinism of a small ensemble
    cfg = build_experiment(DT_BENCH, case="I", num_seeds=2, horizon=40)
    t1, _ = run_ensemble(cfg, DT_SYS)
    t2, _ = run_ensemble(cfg, DT_SYS)
    for r1, r2 in zip(t1.rows, t2.rows):
        assert (r1.mean_abs_err, r1.sd_abs_err, r1.runs) == (
            r2.mean_abs_err, r2.sd_abs_err, r2.runs
        )
    checks.append("determinism ok")
    return "; ".join(checks)
