"""Acceptance criteria 1-11, one test each, every test printing a PASS/FAIL line."""

import numpy as np
import pytest

from qmopt import io
from qmopt.calculus import (
    MatTuple,
    RealFn,
    fd_gradient,
    fd_quadratic_form,
    hessian_quadratic_form,
    prototype_gradient,
    prototype_objective,
    prototype_second_partials,
    prototype_signature,
    quadratic_form_from_partials,
    r_product,
    taylor_orders,
)
from qmopt.cli import main, psnr
from qmopt.optimality import (
    ConstrainedProblem,
    LinearOperator,
    ScidProblem,
    beta_map_is_singleton,
    beta_stationarity_residual,
    kkt_residual,
    lipschitz_ratios,
    prox_l0,
    scid_objective,
    scid_stationarity,
)
from qmopt.qmatrix import QMatrix, fro_norm, inner, qsvd, rank, real_representation, support, truncate_rank
from qmopt.quaternion import Quaternion, inverse, mul
from qmopt.solvers import SolverConfig, estimate_operator_norm, lrqd_solve, scid_solve
from qmopt.synth import observed_mask, planted_low_rank, sparse_corruption


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail

    return report


def grouped_singular_values(A):
    s = np.linalg.svd(real_representation(A), compute_uv=False)
    return s.reshape(-1, 4)[: min(A.shape)].mean(axis=1)


# 1 ---------------------------------------------------------------------------------------


def test_criterion_1_qsvd(verdict):
    rng = np.random.default_rng(1)
    worst = {"recon": 0.0, "unitary": 0.0, "sigma": 0.0}
    for k in range(200):
        m, n = int(rng.integers(1, 17)), int(rng.integers(1, 13))
        A = QMatrix.random(m, n, rng)
        for method in ("lapack", "golub-kahan"):
            f = qsvd(A, method=method)
            worst["recon"] = max(worst["recon"], fro_norm(A - f.reconstruct()) / fro_norm(A))
            worst["unitary"] = max(worst["unitary"], fro_norm(f.U.H @ f.U - QMatrix.eye(m)),
                                   fro_norm(f.V.H @ f.V - QMatrix.eye(n)))
            worst["sigma"] = max(worst["sigma"], np.abs(f.sigma - grouped_singular_values(A)).max())
    ok = worst["recon"] <= 1e-10 and worst["unitary"] <= 1e-10 and worst["sigma"] <= 1e-9
    verdict(1, ok, "200 matrices x 2 methods: max reconstruction {recon:.2e}, unitarity {unitary:.2e}, "
                   "sigma vs grouped real SVD {sigma:.2e}".format(**worst))


# 2 ---------------------------------------------------------------------------------------


def test_criterion_2_r_product(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for k in range(1000):
        sig = tuple((int(rng.integers(1, 5)), int(rng.integers(1, 5))) for _ in range(1 + k % 3))
        A, H = MatTuple.random(sig, rng), MatTuple.random(sig, rng)
        oracle = sum(inner(a, h).q0 for a, h in zip(A, H))
        worst = max(worst, abs(r_product(A, H) - oracle))
    verdict(2, worst <= 1e-12, f"1000 tuple pairs: max |r_product - Re sum inner| = {worst:.2e}")


# 3 ---------------------------------------------------------------------------------------


def test_criterion_3_gradients(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        m, n, r = int(rng.integers(1, 13)), int(rng.integers(1, 13)), int(rng.integers(1, 5))
        f = prototype_objective(m, n, r)
        X = MatTuple.random(prototype_signature(m, n, r), rng)
        G = prototype_gradient(X)
        fd = fd_gradient(f.evaluate, X)
        worst = max(worst, (fd - G).fro_norm() / max(G.fro_norm(), 1e-300))
    verdict(3, worst <= 1e-6, f"100 prototype instances: max relative gradient gap {worst:.2e}")


# 4 ---------------------------------------------------------------------------------------


def test_criterion_4_second_order(verdict):
    rng = np.random.default_rng(4)
    worst_fd = worst_sym = 0.0
    min_order = np.inf
    for k in range(100):
        m, n, r = int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 5))
        sig = prototype_signature(m, n, r)
        f = prototype_objective(m, n, r)
        X, D = MatTuple.random(sig, rng), MatTuple.random(sig, rng)
        q = hessian_quadratic_form(f, X, D)
        qfd = fd_quadratic_form(f.evaluate, X, D)
        worst_fd = max(worst_fd, abs(q - qfd) / abs(q))
        p = prototype_second_partials(X)
        a = quadratic_form_from_partials(p, D)
        b = quadratic_form_from_partials(p, D, swap_cross=True)
        worst_sym = max(worst_sym, abs(a - b) / max(1.0, abs(a)))
        if k % 5 == 0:
            min_order = min(min_order, taylor_orders(f, X, D)[1])
    ok = worst_fd <= 1e-5 and worst_sym <= 1e-9 and min_order >= 2.9
    verdict(4, ok, f"100 (X, D): quadratic form vs second differences {worst_fd:.2e} relative, "
                   f"cross-term symmetry {worst_sym:.2e}, min Taylor order {min_order:.3f}")


# 5 ---------------------------------------------------------------------------------------


def test_criterion_5_prox_and_projection(verdict):
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(100):
        Z = QMatrix.random(10, 10, rng) * float(rng.uniform(0.1, 4.0))
        tau = float(rng.uniform(0.01, 3.0))
        out = prox_l0(Z, tau).data
        for i in range(10):
            for j in range(10):
                z = Z.data[:, i, j]
                # brute force over the candidates {0, z}: 0 costs |z|^2 / 2, z costs tau
                best = np.zeros(4) if 0.5 * float(z @ z) <= tau else z
                mismatches += not np.array_equal(out[:, i, j], best)
    losses = 0
    margin = np.inf
    for _ in range(50):
        m, n = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        r = int(rng.integers(1, min(m, n)))
        A = QMatrix.random(m, n, rng)
        best = fro_norm(A - truncate_rank(A, r))
        f = qsvd(A)
        Ur = QMatrix(f.U.data[:, :, :r] * f.sigma[:r])
        Vr = QMatrix(f.V.data[:, :, :r])
        for c in range(100):
            if c % 2:
                B = QMatrix.random(m, r, rng) @ QMatrix.random(r, n, rng)
            else:
                # near-optimal competitors: perturbed leading factors
                s = 10.0 ** rng.uniform(-4, 0)
                B = (Ur + QMatrix.random(m, r, rng) * s) @ (Vr + QMatrix.random(n, r, rng) * s).H
            d = fro_norm(A - B)
            losses += d < best
            margin = min(margin, d - best)
    ok = mismatches == 0 and losses == 0
    verdict(5, ok, f"prox vs brute force on 10^4 entries: {mismatches} mismatches; truncation beaten "
                   f"{losses} times in 5000 comparisons (smallest margin {margin:.2e})")


# 6 ---------------------------------------------------------------------------------------


def _rank_one_completion(D, i, j):
    """Rank-1 Y agreeing with D off the entry (i, j)."""
    a = D.entry(1 - i, 1 - j)
    Yij = mul(mul(D.entry(i, 1 - j), inverse(a)), D.entry(1 - i, j))
    data = D.data.copy()
    data[:, i, j] = Yij.to_array()
    return QMatrix(data)


def _two_by_two_global_minimizers(D, lam):
    """Enumerate the supports of Z: empty support costs sigma_2^2 / 2 at best, k >= 1 entries at least lam k.

    One-entry supports reach lam through a rank-1 completion of the other three entries.
    """
    s = grouped_singular_values(D)
    best_empty = 0.5 * s[1] ** 2
    candidates = {(): best_empty}
    for i in range(2):
        for j in range(2):
            candidates[((i, j),)] = lam
    for mask in range(16):
        cells = tuple((c // 2, c % 2) for c in range(4) if mask >> c & 1)
        if len(cells) >= 2:
            candidates[cells] = lam * len(cells)  # lower bound; never below the single-entry value
    opt = min(candidates.values())
    points = []
    if best_empty == opt:
        points.append((truncate_rank(D, 1), QMatrix.zeros(2, 2)))
    for (i, j), in [c for c, v in candidates.items() if len(c) == 1 and v == opt]:
        Y = _rank_one_completion(D, i, j)
        points.append((Y, D - Y))
    return opt, points


def test_criterion_6_beta_stationarity(verdict):
    worst_res, fails = 0.0, 0
    for i in range(20):
        rng = np.random.default_rng(100 + i)
        r = 1 + i % 3
        sparsity = [0.02, 0.05, 0.08, 0.1][i % 4]
        Yt = planted_low_rank(32, 32, r, rng)
        Zt = sparse_corruption(32, 32, sparsity, 10.0, rng)
        P = ScidProblem(Yt + Zt, LinearOperator.identity(32, 32), 4.0, r)
        res = scid_solve(P)
        ry, rz = beta_stationarity_residual(P, res.Y, res.Z, res.beta)
        worst_res = max(worst_res, ry, rz)
        fails += not (res.converged and scid_stationarity(P, res.Y, res.Z, tol=1e-7).ok)
    toy_res, toy_gap, singletons, toys = 0.0, 0.0, True, 0
    for seed in range(6):
        D = QMatrix.random(2, 2, 600 + seed)
        s2 = grouped_singular_values(D)[1]
        for lam in (s2**2, 0.01 * s2**2):
            P = ScidProblem(D, LinearOperator.identity(2, 2), lam, 1)
            opt, points = _two_by_two_global_minimizers(D, lam)
            beta = 0.4 / (2.0 * estimate_operator_norm(P.op))
            for Y, Z in points:
                toys += 1
                toy_gap = max(toy_gap, abs(scid_objective(P, Y, Z) - opt) / opt)
                toy_res = max(toy_res, *beta_stationarity_residual(P, Y, Z, beta))
                singletons &= beta_map_is_singleton(P, Y, Z, beta)
    ok = worst_res <= 1e-8 and fails == 0 and toy_res <= 1e-8 and toy_gap <= 1e-12 and singletons
    verdict(6, ok, f"20 planted 32x32 runs: max beta-residual {worst_res:.2e}, {fails} stationarity "
                   f"failures; {toys} enumerated 2x2 global minimizers: beta-residual {toy_res:.2e}, "
                   f"objective gap {toy_gap:.1e}, singleton map {singletons}")


# 7 ---------------------------------------------------------------------------------------


def _rank_deficient_outputs():
    out = []
    for seed in range(6):
        rng = np.random.default_rng(700 + seed)
        k, m, n = 1 + seed % 2, 12, 10
        Yt = planted_low_rank(m, n, k, rng)
        Zt = sparse_corruption(m, n, 0.05, 10.0, rng)
        ident = LinearOperator.identity(m, n)
        mask = LinearOperator.mask(observed_mask(m, n, 0.8, rng, min_per_line=k + 1))
        # low-rank data from a zero start; the sparse weight keeps Z empty
        out.append((ScidProblem(Yt, ident, 50.0, k + 1), "zero"))
        # corrupted data from the planted pair
        out.append((ScidProblem(Yt + Zt, ident, 4.0, k + 1), (Yt, Zt)))
        out.append((ScidProblem(mask(Yt + Zt), mask, 4.0, k + 1), (Yt, mask(Zt))))
    for P, init in out:
        res = scid_solve(P, SolverConfig(max_iters=20000), init=init)
        yield P, res


def _real_rank(A):
    return int(np.linalg.matrix_rank(real_representation(A))) // 4


def _feasible_perturbation(Y, Z, U, V, r, eps, kind, rng):
    m, n = Y.shape
    k = U.shape[1]
    extra = r - k
    if kind == 0:  # dense Z, rank-raising Y
        dY = QMatrix.random(m, extra, rng) @ QMatrix.random(extra, n, rng)
        dZ = QMatrix.random(m, n, rng)
    elif kind == 1:  # Z on its support, Y along its factors
        dU, dV = QMatrix.random(m, k, rng), QMatrix.random(n, k, rng)
        dY = (U + dU) @ (V + dV).H - Y if k else QMatrix.zeros(m, n)
        dZ = QMatrix(QMatrix.random(m, n, rng).data * support(Z))
    else:  # one new entry of Z, Y along a mix of both
        dY = QMatrix.random(m, extra, rng) @ QMatrix.random(extra, n, rng)
        dZ = QMatrix.zeros(m, n)
        i, j = int(rng.integers(m)), int(rng.integers(n))
        data = dZ.data.copy()
        data[:, i, j] = rng.standard_normal(4)
        dZ = QMatrix(data)
    size = np.sqrt(fro_norm(dY) ** 2 + fro_norm(dZ) ** 2)
    t = eps * float(rng.uniform(1e-3, 1.0)) / size
    if kind == 1 and k:
        # scale the factor step, not the difference, so the rank stays <= k
        dU, dV = dU * t, dV * t
        return (U + dU) @ (V + dV).H, Z + dZ * t
    return Y + dY * t, Z + dZ * t


def test_criterion_7_local_minimizers(verdict):
    rng = np.random.default_rng(7)
    outputs, worst, infeasible, not_deficient = 0, -np.inf, 0, 0
    for P, res in _rank_deficient_outputs():
        if not (res.converged and rank(res.Y) < P.r):
            not_deficient += 1
            continue
        outputs += 1
        mod = res.Z.modulus()[support(res.Z)]
        eps = min(1.0, 0.5 * float(mod.min())) if mod.size else 1.0
        base = scid_objective(P, res.Y, res.Z)
        k = rank(res.Y)
        f = qsvd(res.Y)
        U = QMatrix(f.U.data[:, :, :k] * f.sigma[:k])
        V = QMatrix(f.V.data[:, :, :k])
        for t in range(1000):
            Y2, Z2 = _feasible_perturbation(res.Y, res.Z, U, V, P.r, eps, t % 3, rng)
            infeasible += _real_rank(Y2) > P.r
            worst = max(worst, base - scid_objective(P, Y2, Z2))
    ok = not_deficient == 0 and infeasible == 0 and worst <= 1e-12
    verdict(7, ok, f"{outputs} rank-deficient solver outputs x 1000 feasible perturbations: largest "
                   f"objective change base - perturbed {worst:.2e} ({infeasible} infeasible, {not_deficient} runs "
                   f"without a rank-deficient output)")


# 8 ---------------------------------------------------------------------------------------


def test_criterion_8_planted_recovery(verdict):
    rng = np.random.default_rng(8)
    Yt = planted_low_rank(32, 32, 3, rng)
    Zt = sparse_corruption(32, 32, 0.05, 10.0, rng)
    P = ScidProblem(Yt + Zt, LinearOperator.identity(32, 32), 4.0, 3)
    res = scid_solve(P)
    same_support = bool(np.array_equal(support(res.Z), support(Zt)))
    err_y = fro_norm(res.Y - Yt) / fro_norm(Yt)
    rng = np.random.default_rng(0)
    D = planted_low_rank(16, 16, 2, rng)
    mask = observed_mask(16, 16, 0.3, rng, min_per_line=2)
    lr = lrqd_solve(D, mask, 2)
    err_w = fro_norm(lr.W - D) / fro_norm(D)
    ok = same_support and err_y <= 1e-3 and err_w <= 1e-3
    verdict(8, ok, f"denoising: exact support {same_support}, relative Y error {err_y:.2e}; "
                   f"completion from {int(mask.sum())}/256 entries: relative error {err_w:.2e}")


# 9 ---------------------------------------------------------------------------------------


def test_criterion_9_lipschitz(verdict):
    rng = np.random.default_rng(9)
    ops = {
        "identity": LinearOperator.identity(6, 5),
        "mask": LinearOperator.mask(rng.random((6, 5)) < 0.6),
    }
    worst_excess, lines = -np.inf, []
    for name, op in ops.items():
        norm = estimate_operator_norm(op)
        ratios = lipschitz_ratios(op, samples=1000, seed=9)
        worst_excess = max(worst_excess, ratios.max() - 2.0 * norm)
        lines.append(f"{name}: max ratio {ratios.max():.6f}, 2||L*L|| = {2 * norm:.6f}, "
                     f"sqrt(2||L*L||) = {np.sqrt(2 * norm):.6f}")
    verdict(9, worst_excess <= 1e-9, "1000 pairs each; " + "; ".join(lines))


# 10 --------------------------------------------------------------------------------------


def _constructed_problem(rng):
    sig = tuple((int(rng.integers(1, 4)), int(rng.integers(1, 4))) for _ in range(int(rng.integers(1, 4))))
    Xs = MatTuple.random(sig, rng)
    p = int(rng.integers(1, 5))
    A = [MatTuple.random(sig, rng) for _ in range(p)]
    c = rng.uniform(-1.0, 1.0, p)
    lam = rng.standard_normal(p)
    C = Xs + sum((a * float(l) for a, l in zip(A, lam)), MatTuple.zeros(sig))

    def f_val(X):
        d2 = (X - Xs).fro_norm() ** 2
        return 0.5 * (X - C).fro_norm() ** 2 + 0.25 * d2 * d2

    def f_grad(X):
        return (X - C) + (X - Xs) * (X - Xs).fro_norm() ** 2

    f = RealFn(evaluate=f_val, grad=f_grad, signature=sig)

    def constraint(a, cj):
        return RealFn(
            evaluate=lambda X: r_product(a, X - Xs) + 0.5 * cj * (X - Xs).fro_norm() ** 2,
            grad=lambda X: a + (X - Xs) * cj,
            signature=sig,
        )

    eqs = [constraint(a, float(cj)) for a, cj in zip(A, c)]
    return ConstrainedProblem(f, eqs), Xs, lam


def test_criterion_10_kkt(verdict):
    rng = np.random.default_rng(10)
    worst_res, worst_mult, licq = 0.0, 0.0, True
    for _ in range(20):
        P, Xs, lam = _constructed_problem(rng)
        rep = kkt_residual(P, Xs)
        worst_res = max(worst_res, rep.stationarity, rep.eq_feasibility)
        worst_mult = max(worst_mult, float(np.abs(rep.lam - lam).max()))
        licq &= rep.licq_ok
    ok = worst_res <= 1e-8 and worst_mult <= 1e-6
    verdict(10, ok, f"20 constructed problems: max KKT residual {worst_res:.2e}, max multiplier "
                    f"error {worst_mult:.2e}, LICQ held {licq}")


# 11 --------------------------------------------------------------------------------------


def test_criterion_11_cli(verdict, tmp_path, monkeypatch):
    # relative paths so the config echo in the report is the same on both runs
    monkeypatch.chdir(tmp_path)
    codes, values, snapshots = [], [], []
    for seed in (0, 11):
        for _ in range(2):
            codes.append(main(["synth", "--out", "synth", "--seed", str(seed)]))
            # the PPM input carries 8-bit quantization noise; the sparse weight must sit above it
            codes.append(main(["denoise", "--input", "synth/D.ppm", "--rank", "3", "--lambda", "0.001",
                               "--ref", "synth/Y_true.qmat", "--out", "den"]))
            codes.append(main(["check", "--problem", "den/problem.json", "--point", "den/point.json",
                               "--out", "check.json"]))
            files = sorted(p for p in tmp_path.rglob("*") if p.is_file())
            snapshots.append({p.relative_to(tmp_path): p.read_bytes() for p in files})
            rep = io.read_json(tmp_path / "den" / "report.json")
            value = psnr(io.read_qmat(tmp_path / "den" / "Y.qmat"), io.read_qmat(tmp_path / "synth" / "Y_true.qmat"))
            values.append(value if abs(value - rep["psnr"]) <= 1e-9 else -np.inf)
            for p in files:
                p.unlink()
    identical = snapshots[0] == snapshots[1] and snapshots[2] == snapshots[3]
    ok = codes == [0] * 12 and min(values) >= 40 and identical
    verdict(11, ok, f"two seeds, each run twice: exit codes {sorted(set(codes))}, min PSNR {min(values):.1f} dB, "
                    f"{len(snapshots[0])} artifacts byte-identical across reruns: {identical}")
