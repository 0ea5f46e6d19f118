import math

import numpy as np
import pytest

from invdiff import apg, diffop, synth
from invdiff.apg import DivergenceError, SolveConfig, SolveLog, cost, fista_momentum, solve
from invdiff.diffop import build_kernel_bank
from invdiff.prox import regularizer_value
from invdiff.tensorio import ImageGrid, PsdrStack, SigmaGrid, WeightMaps

# (t2, alpha2) from tests/derivations/prox_values.py: evaluating the recursion twice from t0 = 1
FISTA_T2 = 2.193527085331054
FISTA_ALPHA2 = 0.28175352512532087


@pytest.fixture(scope="module")
def bank():
    return build_kernel_bank(SigmaGrid([1.2, 2.0, 3.0, 4.5]), rank=1)


@pytest.fixture(scope="module")
def fixture_obs(bank):
    rng = np.random.default_rng(5)
    a = np.zeros((bank.K, 24, 24))
    for _ in range(4):
        m, n = rng.integers(4, 20, size=2)
        a[:, m, n] += rng.uniform(0.5, 1.5, size=bank.K)
    d = diffop.forward(bank, a) + 0.01 * rng.normal(size=(24, 24))
    return a, d


def test_momentum_sequence():
    t1, a1 = fista_momentum(1.0)
    assert t1 == pytest.approx((1 + math.sqrt(5)) / 2, rel=1e-15)
    assert a1 == 0.0
    t2, a2 = fista_momentum(t1)
    assert t2 == pytest.approx(FISTA_T2, rel=1e-15)
    assert a2 == pytest.approx(FISTA_ALPHA2, rel=1e-15)
    assert abs(t2 - 2.193527) < 1e-6 and abs(a2 - 0.281754) < 1e-6


def test_momentum_alpha_range_and_ista():
    t = 1.0
    for _ in range(500):
        t_new, alpha = fista_momentum(t)
        assert 0.0 <= alpha < 1.0
        assert fista_momentum(t, "none") == (t_new, 0.0)
        t = t_new
    with pytest.raises(ValueError):
        fista_momentum(0.5)


def test_zero_observation_is_a_fixed_point(bank):
    a, log = solve(np.zeros((16, 16)), bank, cfg=SolveConfig(lam=0.5, iters=30, log_every=5))
    assert not np.any(a.coeffs)
    assert log.costs == [0.0] * len(log.costs)
    assert log.nse == [0.0] * len(log.nse)


def test_cost_examples(bank, rng):
    d = rng.random((12, 12))
    w2 = rng.uniform(0.5, 2.0, size=(12, 12))
    wm = WeightMaps(w2, np.ones((12, 12)))
    c, nse, gs = cost(np.zeros((bank.K, 12, 12)), d, bank, wm, lam=0.7)
    assert c == pytest.approx(np.sum(w2 * d * d), rel=1e-15)
    assert (nse, gs) == (1.0, 0.0)
    a = rng.random((bank.K, 12, 12))
    c, nse, _ = cost(a, diffop.forward(bank, a), bank, wm, lam=0.0)
    assert c == 0.0 and nse == 0.0


def test_cost_matches_naive_recomputation(bank, rng):
    M = N = 10
    a = rng.random((bank.K, M, N))
    d = rng.random((M, N))
    w2 = rng.uniform(0.5, 2.0, size=(M, N))
    lam = 0.37
    # explicit shifted sums with the rank-1 kernels
    pred = np.zeros((M, N))
    for k, width in enumerate(bank.sigma.widths):
        h = bank.lowrank_kernel(k)
        R = h.shape[0] // 2
        for m in range(M):
            for n in range(N):
                for i in range(-R, R + 1):
                    for j in range(-R, R + 1):
                        if 0 <= m - i < M and 0 <= n - j < N:
                            pred[m, n] += math.sqrt(width) * h[R + i, R + j] * a[k, m - i, n - j]
    data = sum(w2[m, n] * (pred[m, n] - d[m, n]) ** 2 for m in range(M) for n in range(N))
    gs = sum(math.sqrt(sum(a[k, m, n] ** 2 for k in range(bank.K))) for m in range(M) for n in range(N))
    c, nse, g = cost(a, d, bank, WeightMaps(w2, np.ones((M, N))), lam)
    assert abs(c - (data + lam * gs)) <= 1e-10 * c
    assert abs(g - gs) <= 1e-10 * gs
    assert abs(nse - data / np.sum(w2 * d * d)) <= 1e-10


def test_ista_cost_is_monotone(bank, fixture_obs):
    _, d = fixture_obs
    _, log = solve(d, bank, cfg=SolveConfig(lam=0.3, iters=300, momentum="none", log_every=1))
    diffs = np.diff(log.costs)
    assert np.all(diffs <= 1e-9 * np.asarray(log.costs[1:]))


def test_iterates_are_feasible(bank, fixture_obs):
    _, d = fixture_obs
    mu = np.ones(d.shape)
    mu[:, :5] = 0
    seen = []

    def check(i, a):
        assert a.min() >= 0.0
        assert not np.any(a[:, mu == 0])
        seen.append(i)

    solve(d, bank, WeightMaps(np.ones(d.shape), mu), SolveConfig(lam=0.2, iters=60, log_every=7), callback=check)
    assert seen == list(range(1, 61))


def test_lam_zero_is_projected_gradient(bank, fixture_obs):
    _, d = fixture_obs
    cfg = SolveConfig(lam=0.0, iters=80, log_every=80)
    a, log = solve(d, bank, cfg=cfg)
    eta = log.eta
    # reference loop: FISTA with only the non-negativity projection
    x_prev = np.zeros((bank.K, *d.shape))
    y = x_prev.copy()
    t = 1.0
    for _ in range(80):
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        g = diffop.adjoint(bank, diffop.forward(bank, y) - d, None)
        x = np.maximum(y - eta * g, 0.0)
        y = x + ((t - 1) / t_new) * (x - x_prev)
        x_prev, t = x, t_new
    np.testing.assert_allclose(a.coeffs, x_prev, rtol=0, atol=1e-12)


def test_step_size_modes(bank):
    wm = WeightMaps.ones((20, 20))
    eta_pow = apg.step_size(bank, wm, SolveConfig())
    eta_bound = apg.step_size(bank, wm, SolveConfig(step_mode="analytic_bound"))
    nsq = diffop.op_norm_sq(bank, wm, "lowrank", iters=200)
    assert eta_pow == pytest.approx(apg.STEP_SAFETY / nsq, rel=1e-15)
    assert 0 < eta_bound <= eta_pow
    assert apg.step_size(bank, wm, SolveConfig(step_mode="fixed", eta=0.25)) == 0.25


def test_single_spot_recovered_in_place():
    gen = SigmaGrid.uniform(1.0, 6.0, 10)
    scene = synth.Scene([synth.Cell(21, 26, 800.0, synth.make_profile("uniform", gen.K))], (48, 48), gen)
    img, _ = synth.render(synth.scene_to_psdr(scene), build_kernel_bank(gen, rank=1), 2.28, synth.NoiseModel(10), seed=0)
    bank = build_kernel_bank(SigmaGrid([2.3, 3.5, 5.0, 6.5]), rank=1)
    a, _ = solve(img.data / 255.0, bank, cfg=SolveConfig(lam=0.5, iters=2000, log_every=100))
    energy = np.sqrt(np.sum(a.coeffs**2, axis=0))
    m, n = np.unravel_index(np.argmax(energy), energy.shape)
    assert max(abs(m - 21), abs(n - 26)) <= 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(bank, fixture_obs):
    _, d = fixture_obs
    with pytest.raises(DivergenceError):
        solve(d, bank, cfg=SolveConfig(lam=0.1, iters=3000, step_mode="fixed", eta=50.0, log_every=50))


def test_solve_shape_errors(bank):
    with pytest.raises(ValueError):
        solve(np.zeros((8, 8)), bank, WeightMaps.ones((9, 9)), SolveConfig(iters=1))
    with pytest.raises(ValueError):
        solve(np.zeros((8, 8)), bank, cfg=SolveConfig(iters=1), a0=PsdrStack.zeros(SigmaGrid([1.0, 2.0]), (8, 8)))


@pytest.mark.parametrize(
    "kwargs",
    [dict(lam=-1.0), dict(iters=0), dict(log_every=0), dict(step_mode="fixed"), dict(step_mode="fixed", eta=0.0),
     dict(step_mode="backtrack"), dict(momentum="nesterov")],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolveConfig(**kwargs)


def test_log_csv_format(tmp_path, bank, fixture_obs):
    _, d = fixture_obs
    _, log = solve(d, bank, cfg=SolveConfig(lam=0.5, iters=25, log_every=10))
    assert log.iters == [0, 10, 20, 25]
    p = tmp_path / "log.csv"
    log.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "iter,cost,nse,gs"
    assert len(lines) == 5
    for line in lines[1:]:
        for v in line.split(",")[1:]:
            assert v == f"{float(v):.12g}"
    back = SolveLog.from_csv(p)
    assert back.iters == log.iters
    np.testing.assert_allclose(back.costs, log.costs, rtol=1e-11)
    assert all(n >= 0 for n in log.nse) and all(g >= 0 for g in log.gs)


def test_log_writes_inf_flag(tmp_path):
    log = SolveLog()
    log.append(0, math.inf, 1.0, math.inf)
    log.to_csv(tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[1] == "0,inf,1,inf"
    with pytest.raises(ValueError):
        log.append(0, 1.0, 1.0, 1.0)


def test_early_stop(bank, fixture_obs):
    _, d = fixture_obs
    _, log = solve(d, bank, cfg=SolveConfig(lam=0.5, iters=5000, log_every=10, tol_rel_cost=1e-3))
    assert log.iters[-1] < 5000


def test_solution_decreases_cost_and_stays_sparse(bank, fixture_obs):
    truth, d = fixture_obs
    a, log = solve(d, bank, cfg=SolveConfig(lam=0.05, iters=400))
    assert log.costs[-1] < log.costs[0]
    assert regularizer_value(a) > 0
    support = np.sum(a.coeffs, axis=0) > 0
    assert support.sum() < 0.25 * support.size
