"""Acceptance suite: one PASS/FAIL line per criterion at the contract tolerances.

Run ``pytest tests/test_acceptance.py -v -s`` or ``python tests/test_acceptance.py``.
The lines are also printed when output capture is on.
"""
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from vemsf.cell import Cell
from vemsf.experiments import ExperimentConfig, run_experiment
from vemsf.macrodiv import MacroDivSpace, dof_count, project_field
from vemsf.mesh import generate_mesh, hexagon_vertices
from vemsf.oracle import VirtualFunctionOracle
from vemsf.poly import dim_p
from vemsf.vem import ElementDofLayout, element_operators, macro_mode_for

ALL_METHODS = ["SFNCVEM", "SFCVEM", "NCVEM", "CVEM"]

# reference condition numbers of the three k=3 local stiffness tables
TABLE_COND = {
    "regular-hexagon": {"NCVEM": 3150.303211, "CVEM": 3406.683909,
                        "SFNCVEM": 3112.248147, "SFCVEM": 3387.405362},
    "perturbed-hexagon": {"NCVEM": 3351.955143, "CVEM": 3942.456177,
                          "SFNCVEM": 3535.589964, "SFCVEM": 4046.311124},
    "hanging-node-square": {"NCVEM": 4470.340249, "CVEM": 5222.4155,
                            "SFNCVEM": 4637.108513, "SFCVEM": 5253.761808},
}


def verdict(capsys, number, name, ok, detail):
    line = f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


def config(**kw):
    return ExperimentConfig.from_dict(kw)


def unique_cells(mesh):
    seen = {}
    for c in range(mesh.n_cells):
        poly = mesh.cell_points(c) - mesh.cell_points(c)[0]
        seen.setdefault(np.round(poly, 10).tobytes(), poly)
    return list(seen.values())


def mesh_zoo():
    return {
        "convex-poly": generate_mesh("convex-poly", n=3),
        "nonconvex-poly": generate_mesh("nonconvex-poly", n=2),
        "uniform-quads": generate_mesh("uniform-quads", n=2),
        "anisotropic-quads": generate_mesh("anisotropic-quads", hx=0.5, hy=0.25),
        "hexagon-Hi": generate_mesh("hexagon-Hi", i=2),
        "square-hanging-nodes": generate_mesh("square-hanging-nodes"),
        "quasi-regular-hexagon": generate_mesh("quasi-regular-hexagon"),
    }


# ---------------------------------------------------------------------------

@pytest.mark.parametrize("mesh", ["convex-poly", "uniform-quads"])
def test_c1_convergence_rates(mesh, capsys):
    rep = run_experiment(config(experiment="convergence", methods=["SFNCVEM", "SFCVEM"],
                                ks=[1, 2, 3], mesh=mesh, levels=4))
    bad, parts = [], []
    for method in ("SFNCVEM", "SFCVEM"):
        for k in (1, 2, 3):
            rows = [r for r in rep.records if r.method == method and r.k == k]
            last = rows[-1]
            secs = sum(r.label["seconds"] for r in rows)
            ok = (last.order_grad >= k - 0.2 and last.order_l2 >= k + 1 - 0.2 and secs <= 120)
            parts.append(f"{method} k={k}: L2 {last.order_l2:.2f} grad {last.order_grad:.2f} "
                         f"{secs:.0f}s")
            if not ok:
                bad.append(parts[-1])
    ok = verdict(capsys, 1, f"convergence rates on {mesh}", not bad, "; ".join(parts))
    assert ok, bad


def test_c2_local_spectrum(capsys):
    rep = run_experiment(config(experiment="local-spectrum", methods=ALL_METHODS, ks=[3]))
    bad, parts = [], []
    for r in rep.records:
        ref = TABLE_COND[r.label["mesh"]][r.method]
        ok = r.n_zero == 1 and ref / 10 <= r.cond <= ref * 10
        parts.append(f"{r.label['mesh']} {r.method} zeros={r.n_zero} cond={r.cond:.0f}")
        if not ok:
            bad.append(parts[-1])
    # positive semidefinite: the eigenvalue floor is checked on the matrices themselves
    from vemsf.experiments import SPECTRUM_MESHES, local_stiffness
    floor = []
    for _, family, params in SPECTRUM_MESHES:
        for method in ALL_METHODS:
            _, A = local_stiffness(rep.config, generate_mesh(family, **params), method, 3)
            ev = np.linalg.eigvalsh(A)
            floor.append(ev[0] / ev[-1])
    psd = min(floor) >= -1e-10
    ok = verdict(capsys, 2, "local kernel and spectrum", not bad and psd,
                 "; ".join(parts) + f"; min lam/lam_max {min(floor):.1e}")
    assert ok, bad


def test_c3_patch_test(capsys):
    rep = run_experiment(config(experiment="patch-test", methods=ALL_METHODS, ks=[3]))
    worst = max(r.err_l2 for r in rep.records)
    grows = []
    for method in ALL_METHODS:
        rows = [r for r in rep.records if r.method == method and r.label["case"] == 3]
        rho = spearmanr([r.cond for r in rows], [r.err_l2 for r in rows]).statistic
        grows.append((method, rho, rows[0].err_l2, rows[-1].err_l2, rows[-1].cond))
    trend = all(rho > 0.5 and last > first for _, rho, first, last, _ in grows)
    case3 = max(r.err_l2 for r in rep.records if r.label["case"] == 3)
    ok = worst <= 1e-8 and case3 <= 1e-6 and trend
    detail = (f"max error {worst:.2e}; case 3: " +
              "; ".join(f"{m} rank corr {rho:.2f}, error {a:.1e} -> {b:.1e} at cond {c:.1e}"
                        for m, rho, a, b, c in grows))
    ok = verdict(capsys, 3, "patch test", ok, detail)
    assert ok


def test_c4_collapsing_hexagons(capsys):
    t0 = time.perf_counter()
    rep = run_experiment(config(experiment="collapsing-hexagons", methods=ALL_METHODS, ks=[8]))
    secs = time.perf_counter() - t0
    cond = {m: np.array([r.cond for r in rep.records if r.method == m]) for m in ALL_METHODS}
    monotone = all(np.all(np.diff(c) > 0) for c in cond.values())
    cross = {
        fam: bool(np.all(cond["SF" + fam][10:] < cond[fam][10:])) for fam in ("NCVEM", "CVEM")}
    detail = (f"monotone in i: {monotone}; " +
              "; ".join(f"i={i}: " + ", ".join(f"{m} {cond[m][i]:.3e}" for m in ALL_METHODS)
                        for i in (10, 11, 12)) +
              f"; SF below standard for i>=10: NC {cross['NCVEM']}, C {cross['CVEM']}; "
              f"{secs:.0f}s")
    ok = verdict(capsys, 4, "collapsing hexagons k=8", monotone and all(cross.values())
                 and secs <= 60, detail)
    assert ok


def test_c5_dimension_oracle(capsys):
    checked, bad = 0, []
    for name, mesh in mesh_zoo().items():
        for poly in unique_cells(mesh):
            for k in (1, 2, 3, 4):
                for mode in ("NC", "C"):
                    cell = Cell(poly, k + 1, 2 * k + 6)
                    space = MacroDivSpace(cell, k, mode)
                    checked += 1
                    if space.dim != dof_count(cell.subtri, k, mode):
                        bad.append((name, k, mode))
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    hexagon = hexagon_vertices(0)
    hand = [(square, "ear-clip", 1, "NC", 4), (hexagon, "centroid-fan", 1, "NC", 7),
            (hexagon, "centroid-fan", 1, "C", 19)]
    got = [MacroDivSpace(Cell(p, 2, 8, s), k, m).dim for p, s, k, m, _ in hand]
    hand_ok = got == [h[-1] for h in hand]
    ok = verdict(capsys, 5, "dimension oracle", not bad and hand_ok,
                 f"{checked} cell/k/mode cases, {len(bad)} mismatches; hand values {got}")
    assert ok, bad


def test_c6_projector_exactness(capsys):
    worst_div, worst_pi, worst_q = 0.0, 0.0, 0.0
    for mesh in mesh_zoo().values():
        for poly in unique_cells(mesh):
            for k in (1, 2, 3, 4):
                for family in ("NC", "C"):
                    cell = Cell(poly, k + 1, 2 * k + 6)
                    space = MacroDivSpace(cell, k, macro_mode_for(family))
                    deg = k - 1 if family == "NC" else k
                    n = dim_p(deg)
                    x = cell.qpoints
                    for a in range(n):
                        for comp in range(2):
                            def g(p, a=a, comp=comp):
                                out = np.zeros((len(p), 2))
                                out[:, comp] = cell.basis.values(p)[:, a]
                                return out
                            c = project_field(space, g)
                            got = np.concatenate(space.evaluate(c, x))
                            worst_div = max(worst_div, np.abs(got - g(x.reshape(-1, 2))).max())
                    ops = element_operators(cell, ElementDofLayout(family, k, len(poly)))
                    I = np.eye(dim_p(k))
                    worst_pi = max(worst_pi, np.abs(ops.PiStar @ ops.D - I).max())
                    worst_q = max(worst_q, np.abs(ops.Q @ ops.D - I).max())
    ok = max(worst_div, worst_pi, worst_q) <= 1e-10
    ok = verdict(capsys, 6, "projector exactness", ok,
                 f"Q^div {worst_div:.1e}, Pi {worst_pi:.1e}, Q {worst_q:.1e}")
    assert ok


def test_c7_oracle_norm_equivalence(capsys):
    rng = np.random.default_rng(7)
    square = generate_mesh("square-hanging-nodes").cell_points(0)
    lo, hi, worst_b, parts = np.inf, -np.inf, 0.0, []
    for name, poly in (("regular hexagon", hexagon_vertices(0)), ("hanging-node square", square)):
        for family in ("NC", "C"):
            for k in (1, 2, 3):
                cell = Cell(poly, k, 2 * k + 4)
                ops = element_operators(cell, ElementDofLayout(family, k, len(poly)),
                                        MacroDivSpace(cell, k, macro_mode_for(family)))
                orc = VirtualFunctionOracle(ops, 3)
                D = rng.standard_normal((ops.layout.n_dofs, 50))
                U = orc.solve(D)
                b = ops.B @ D
                worst_b = max(worst_b, np.abs(orc.macro_moments(U) - b).max() / np.abs(b).max())
                c = np.linalg.solve(ops.macro.gram, b)
                qn = np.sqrt(np.einsum("im,ij,jm->m", c, ops.macro.gram, c))
                ratio = qn / orc.energy_norms(U)
                lo, hi = min(lo, ratio.min()), max(hi, ratio.max())
                parts.append(f"{name} {family} k={k}: [{ratio.min():.3f}, {ratio.max():.3f}]")
    ok = lo > 0.05 and hi <= 1 + 1e-6
    ok = verdict(capsys, 7, "oracle norm equivalence", ok,
                 f"ratios in [{lo:.3f}, {hi:.6f}]; recipe vs oracle moments {worst_b:.1e}; "
                 + "; ".join(parts))
    assert ok


def test_c8_complex_exactness(capsys):
    parts, good = [], True
    for k in (1, 2, 3):
        for mode in ("NC", "C"):
            cell = Cell(hexagon_vertices(0), k + 1, 2 * k + 6, "centroid-fan")
            space = MacroDivSpace(cell, k, mode)
            ns = dim_p(space.degrees.div_cap)
            div_rank = np.linalg.matrix_rank(space.div_moments, tol=1e-9)
            # divergence-free members with vanishing normal trace
            F = np.hstack([space.div_moments] + space.traces)
            closed = space.dim - np.linalg.matrix_rank(F, tol=1e-9)
            curls, lag = space.ring_curls()
            X = np.linalg.lstsq(space.N, curls, rcond=None)[0]
            inside = np.abs(space.N @ X - curls).max() <= 1e-10 * max(np.abs(curls).max(), 1)
            in_closed = np.abs(F.T @ X).max() <= 1e-10
            curl_rank = np.linalg.matrix_rank(X, tol=1e-9)
            ok = div_rank == ns and inside and in_closed and curl_rank == closed == lag.n_interior
            good &= ok
            parts.append(f"k={k} {mode}: rank div {div_rank}/{ns}, curl rank {curl_rank} "
                         f"= closed div-free dim {closed}")
    ok = verdict(capsys, 8, "complex exactness", good, "; ".join(parts))
    assert ok


def test_timing_ordering(capsys):
    rep = run_experiment(config(experiment="timing", methods=ALL_METHODS, ks=[4, 5],
                                mesh="convex-poly", levels=2))
    slow = [(t["n"], t["k"], t["slowest"], t["ratios"]) for t in rep.timing_ratios]
    ok = all(s == "SFCVEM" for _, _, s, _ in slow)
    detail = "; ".join(f"n={n} k={k}: slowest {s}, ratios " +
                       ", ".join(f"{m} {v:.2f}" for m, v in r.items()) for n, k, s, r in slow)
    ok = verdict(capsys, "T", "timing ordering", ok, detail)
    assert ok


if __name__ == "__main__":
    results = []
    for mesh in ("convex-poly", "uniform-quads"):
        results.append((test_c1_convergence_rates, {"mesh": mesh}))
    for fn in (test_c2_local_spectrum, test_c3_patch_test, test_c4_collapsing_hexagons,
               test_c5_dimension_oracle, test_c6_projector_exactness,
               test_c7_oracle_norm_equivalence, test_c8_complex_exactness, test_timing_ordering):
        results.append((fn, {}))
    passed = 0
    for fn, kw in results:
        try:
            fn(capsys=None, **kw)
            passed += 1
        except AssertionError:
            pass
    print(f"{passed}/{len(results)} criteria passed")
