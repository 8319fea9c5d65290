"""Acceptance criteria, each run at its stated tolerance and scale.

Every test records one PASS/FAIL line through the ``acceptance`` fixture;
the lines are repeated in the terminal summary.
"""
import time

import numpy as np
import pytest
import scipy.linalg

from volac import operators as op
from volac.degeneracy import TAU_DEG, cokernel_check, min_singular
from volac.field import Field, TorusGrid
from volac.lab.config import config_from_dict
from volac.lab.experiments import oracle_match, run_experiment
from volac.lab.report import document_text
from volac.manifold import MetricSpec, conformal_modes
from volac.potential import double_well
from volac.solver import newton_solve

pytestmark = pytest.mark.slow

I2 = MetricSpec.identity(2)
EPS1 = 1 / (2 * np.pi)


def config(kind, seed=None, **blocks):
    return config_from_dict({"schema_version": 1, **blocks}, seed=seed, experiment=kind)


@pytest.fixture(scope="module")
def grid64():
    return TorusGrid(2, 64)


@pytest.fixture(scope="module")
def stripe64(grid64):
    u0 = Field.from_function(grid64, lambda x, y: 0.5 * np.cos(2 * np.pi * x))
    return newton_solve(0.9 * EPS1, I2, double_well(), 0.0, (u0, 0.0))


# -- 1 -----------------------------------------------------------------------------------

def test_sweep_locates_constant_branch_dips(acceptance):
    t0 = time.perf_counter()
    rec = run_experiment(config("sweep", experiment={"nu": 0.1, "eps_min": 0.1, "eps_max": 0.2,
                                                     "eps_step": 1e-3}))
    elapsed = time.perf_counter() - t0
    predicted = [np.sqrt(0.97 / (4 * np.pi ** 2 * m)) for m in (1, 2)]
    dips = sorted(rec.results["dips"], reverse=True)
    errs = [abs(d - p) / p for d, p in zip(dips, predicted)]
    kd = {round(c["predicted"], 12): c["kernel_dim_at_dip"] for c in rec.results["comparisons"]}
    k1 = kd.get(round(predicted[0], 12))
    ok = len(dips) == 2 and max(errs) <= 1e-4 and k1 == 4 and elapsed <= 60
    acceptance("1 sweep dips at sqrt(0.97/(4 pi^2 m))", ok,
               f"rel errors {', '.join(f'{e:.2e}' for e in errs)}; kernel dim {k1}; {elapsed:.1f} s")
    assert ok


# -- 2 -----------------------------------------------------------------------------------

def _adjoint_worst(g, grid, rng, count):
    worst = 0.0
    eps = 0.3
    for _ in range(count):
        f = Field.random(grid, rng, kmax=int(rng.integers(1, 12)))
        v = Field.random(grid, rng, kmax=int(rng.integers(1, 12)))
        lhs = op.energy_E(eps, g, op.apply_A(eps, g, f), v)
        rhs = op.l2_inner(g, f, v)
        nf = np.sqrt(op.l2_inner(g, f, f))
        nv = np.sqrt(op.l2_inner(g, v, v))
        worst = max(worst, abs(lhs - rhs) / (nf * nv))
    return worst


def test_operator_identity(acceptance, grid64):
    rng = np.random.default_rng(2)
    flat = _adjoint_worst(MetricSpec(G=np.array([[1.3, 0.2], [0.2, 0.9]])), grid64, rng, 100)
    phi = conformal_modes(grid64, [((1, 0), 0.1), ((2, 1), 0.05), ((0, 3), -0.04)])
    bent = _adjoint_worst(MetricSpec(G=np.eye(2), phi=phi), grid64, rng, 100)
    ok = flat <= 1e-11 and bent <= 1e-9
    acceptance("2 E(Af, v) = int f v", ok, f"flat {flat:.2e} (<=1e-11), conformal {bent:.2e} (<=1e-9)")
    assert ok


# -- 3 -----------------------------------------------------------------------------------

def test_check_calculus(acceptance):
    rec = run_experiment(config("check-calculus", seed=1, experiment={"samples": 50}))
    worst = max(w["error"] for w in rec.results["worst"].values())
    orders = sum(w["order_failures"] for w in rec.results["worst"].values())
    ok = rec.passed and worst <= 1e-6 and orders == 0 and rec.results["samples"] == 50
    acceptance("3 derivative formulas by finite differences", ok,
               f"worst relative error {worst:.2e}; order failures {orders}; 50 samples")
    assert ok


# -- 4 -----------------------------------------------------------------------------------

def _solver_outputs(grid):
    pot = double_well()
    bent = MetricSpec(G=np.eye(2), phi=conformal_modes(grid, [((1, 0), 0.05)]))
    cases = [
        (1.0, I2, 0.0, Field.from_function(grid, lambda x, y: 0.1 * np.cos(2 * np.pi * x)), 0.0),
        (1.0, I2, 0.2, Field.zeros(grid), 0.0),
        (0.9 * EPS1, I2, 0.0, Field.from_function(grid, lambda x, y: 0.5 * np.cos(2 * np.pi * x)), 0.0),
        (0.14, MetricSpec(G=np.array([[1.2, 0.1], [0.1, 0.8]])), 0.1,
         Field.from_function(grid, lambda x, y: 0.1 + 0.5 * np.cos(2 * np.pi * y)), 0.0),
        (0.9 * EPS1, bent, 0.0, Field.from_function(grid, lambda x, y: 0.5 * np.cos(2 * np.pi * x)), 0.0),
    ]
    for eps, g, nu, u0, lam0 in cases:
        yield newton_solve(eps, g, pot, nu, (u0, lam0))


def _constrained_hessian_kernel(grid, eps, curv_values, tol):
    """Null space of the Hessian restricted to mean-zero fields, assembled independently.

    The basis is ``sqrt 2 cos(2 pi k.x), sqrt 2 sin(2 pi k.x)`` over a half
    lattice without the constant; the operator ``-eps^2 Laplacian + W''`` is
    applied on the grid with its own FFT wavenumbers, and entries are exact
    grid quadratures of band-limited products.
    """
    N = grid.N
    h = N // 2
    ks = [(i, j) for i in range(-h + 1, h) for j in range(-h + 1, h)
          if (i > 0) or (i == 0 and j > 0)]
    x = np.arange(N) / N
    X, Y = np.meshgrid(x, x, indexing="ij")
    phase = np.array([2 * np.pi * (a * X + b * Y) for a, b in ks]).reshape(len(ks), -1)
    Phi = np.concatenate([np.sqrt(2) * np.cos(phase), np.sqrt(2) * np.sin(phase)])
    freq = np.fft.fftfreq(N, 1.0 / N)
    lap = 4 * np.pi ** 2 * (freq[:, None] ** 2 + freq[None, :] ** 2)
    KPhi = np.empty_like(Phi)
    for i, row in enumerate(Phi):
        v = row.reshape(N, N)
        KPhi[i] = (eps ** 2 * np.fft.ifft2(lap * np.fft.fft2(v)).real + curv_values * v).ravel()
    K = Phi @ KPhi.T / N ** 2
    K = (K + K.T) / 2
    w, V = scipy.linalg.eigh(K)
    keep = np.abs(w) <= tol * np.abs(w).max()
    return V[:, keep].T @ Phi


def test_level_set_and_hessian_correspondence(acceptance, grid64):
    pot = double_well()
    worst_r = worst_m = 0.0
    for sol in _solver_outputs(grid64):
        r = op.residual_norm(sol.eps, sol.metric, pot, sol.u, sol.lam, sol.nu)
        m = abs(op.integrate(sol.metric, sol.u) - sol.nu)
        worst_r, worst_m = max(worst_r, r, sol.residual), max(worst_m, m, sol.mass_error)
    # degenerate constant test case: u = 0, nu = 0, eps = eps_1
    u = Field.zeros(grid64)
    rep = min_singular(EPS1, I2, pot, u)
    aug = np.array([k.field.values.ravel() for k in rep.kernel])
    lam_part = max(abs(k.scalar) for k in rep.kernel) if rep.kernel else 0.0
    oracle = _constrained_hessian_kernel(grid64, EPS1, pot.d2W(np.zeros((64, 64))), TAU_DEG)
    dims = (aug.shape[0], oracle.shape[0])
    angle = float(np.max(scipy.linalg.subspace_angles(aug.T, oracle.T))) if dims[0] == dims[1] else np.inf
    ok = worst_r <= 1e-10 and worst_m <= 1e-10 and dims[0] == dims[1] and angle <= 1e-8
    acceptance("4 level set and Hessian kernel", ok,
               f"max residual {worst_r:.2e}, mass {worst_m:.2e}; kernel dims {dims[0]}={dims[1]}, "
               f"angle {angle:.2e}, multiplier part {lam_part:.1e}")
    assert ok


# -- 5 -----------------------------------------------------------------------------------

def test_cokernel_characterization(acceptance, grid64, stripe64):
    pot = double_well()
    cases = {
        "nondegenerate constant": (0.3, Field.constant(grid64, 0.1), 0.1 ** 3 - 0.1, lambda d: d == 0),
        "eps_1 constant": (EPS1, Field.zeros(grid64), 0.0, lambda d: d == 4),
        "flat stripe": (stripe64.eps, stripe64.u, stripe64.lam, lambda d: d >= 1),
    }
    ok, parts = True, []
    for name, (eps, u, lam, want) in cases.items():
        rep = cokernel_check(eps, I2, pot, u, lam)
        good = rep.dims_match and want(rep.dim) and rep.max_residual <= 1e-8
        ok &= good
        parts.append(f"{name} {rep.dim}={rep.kernel_dim} res {rep.max_residual:.1e}")
    acceptance("5 cokernel dimension and flipped residuals", ok, "; ".join(parts))
    assert ok


# -- 6 -----------------------------------------------------------------------------------

def test_genericity_probe(acceptance):
    t0 = time.perf_counter()
    rec = run_experiment(config("probe-generic", seed=1, experiment={"samples": 200}))
    elapsed = time.perf_counter() - t0
    r = rec.results
    sym = r["symmetry_breaking"]
    before, after = sym["before"]["relative_sigma_min"], sym["after"]["relative_sigma_min"]
    ok = (r["samples"] == 200 and r["degenerate_hits"] == 0 and r["openness_failures"] == 0
          and r["openness_probes"] > 0 and before <= 1e-6 and after >= 10 * TAU_DEG
          and sym["after"]["nonconstant"] and elapsed <= 600)
    acceptance("6 genericity probe", ok,
               f"{r['degenerate_hits']}/200 degenerate; openness failures {r['openness_failures']}"
               f"/{r['openness_probes']}; stripe {before:.1e} -> {after:.1e}; {elapsed:.0f} s")
    assert ok


# -- 7 -----------------------------------------------------------------------------------

def test_independent_oracle(acceptance, stripe64):
    m = oracle_match(stripe64, tol=1e-6)
    ok = bool(m["matched"]) and m["profile_distance"] <= 1e-6 and m["lambda_difference"] <= 1e-6
    acceptance("7 stripe matches 1D oracle", ok,
               f"profile {m.get('profile_distance', np.inf):.1e}, lambda {m.get('lambda_difference', np.inf):.1e}")
    assert ok


# -- 8 -----------------------------------------------------------------------------------

def test_determinism(acceptance, tmp_path):
    from volac.lab import cli
    runs = {
        "check-calculus": {"samples": 6},
        "probe-generic": {"samples": 12, "openness_samples": 4},
        "census": {"eps": 0.9 * EPS1, "nu": 0.0, "starts": 2},
    }
    same = []
    for kind, params in runs.items():
        c = {"schema_version": 1, "manifold": {"N": 16}, "solver": {"flow_steps": 10},
             "experiment": {"kind": kind, **params}, "seed": 7}
        docs = [document_text(run_experiment(config_from_dict(c))) for _ in range(2)]
        same.append(docs[0] == docs[1])
    # through the CLI, including the CSV tables and a worker pool
    import yaml
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"schema_version": 1, "manifold": {"N": 16},
                                 "experiment": {"kind": "probe-generic", "samples": 8}, "seed": 3}))
    outs = [tmp_path / "a", tmp_path / "b"]
    for out, threads in zip(outs, ("1", "2")):
        cli.main(["probe-generic", "--config", str(p), "--out", str(out), "--threads", threads])
    files = sorted(f.name for f in outs[0].iterdir() if f.name != "timing.json")
    same.append(all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files))
    ok = all(same)
    acceptance("8 byte-identical result documents", ok,
               f"{sum(same)}/{len(same)} reruns identical ({', '.join(runs)}, CLI with 1 and 2 workers)")
    assert ok
