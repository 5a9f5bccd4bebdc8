import csv
import io

import numpy as np
import pytest

from robinlab.branch import (
    CSV_COLUMNS,
    Branch,
    check_left_continuity,
    check_monotone,
    summarize,
    sweep,
)
from robinlab.nonlinearity import builtin
from robinlab.solvers import DEFAULT_TOL


@pytest.fixture(scope="module")
def sub_branch(robin):
    forms, eig = robin
    lam1 = eig.lambda_hat_1
    grid = [lam1 - 2.0, lam1 - 1.0, lam1 - 0.5, lam1 + 0.5]
    return sweep(forms, builtin("sub_f1", q=1.5), grid, n_starts=10, seed=0, eig=eig)


def test_sweep_statuses(sub_branch):
    st = [e.status for e in sub_branch.entries]
    assert st == ["Uniqueness", "Uniqueness", "Uniqueness", "Nonexistence"]
    for e in sub_branch.entries[:3]:
        assert e.u is not None and e.n_solutions == 1
    assert sub_branch.entries[3].u is None


def test_sweep_entries_above_threshold_are_nonexistence(sub_branch):
    lam1 = sub_branch.lambda_hat_1
    for e in sub_branch.entries:
        if e.lam >= lam1 - DEFAULT_TOL.tol_eig:
            assert e.status == "Nonexistence"
        else:
            assert e.exists


def test_empty_grid(robin_small):
    forms, eig = robin_small
    b = sweep(forms, builtin("sub_f1"), [], eig=eig)
    assert b.entries == [] and b.lambda_grid == []
    assert b.to_csv().strip() == ",".join(CSV_COLUMNS)
    assert check_monotone(b).passed


def test_grid_must_increase():
    with pytest.raises(ValueError):
        Branch([1.0, 1.0], [], 2.0, "H4")


def test_monotone_and_strict(sub_branch):
    rep = check_monotone(sub_branch)
    assert rep.passed, rep.violations
    assert rep.strict_checked
    assert all(g["min_interior_gap"] > 0 for g in rep.strict_gaps)
    assert len(rep.strict_gaps) == 2


def test_shuffled_branch_reports_violations(sub_branch):
    ex = sub_branch.existence()
    shuffled = Branch(sub_branch.lambda_grid, [ex[2], ex[0], ex[1]], sub_branch.lambda_hat_1,
                      sub_branch.hclass, forms=sub_branch.forms, nl=sub_branch.nl)
    rep = check_monotone(shuffled)
    assert not rep.passed
    kinds = {v["kind"] for v in rep.violations}
    assert "order" in kinds
    # swapping the stored vectors makes a genuine nodewise violation with a witness
    a, b = ex[0], ex[1]
    fake = [type(a)(a.lam, a.status, u=b.u), type(b)(b.lam, b.status, u=a.u)]
    rep = check_monotone(Branch([a.lam, b.lam], fake, sub_branch.lambda_hat_1, "H4",
                                forms=sub_branch.forms, nl=sub_branch.nl))
    nodal = [v for v in rep.violations if v["kind"] == "nodewise"]
    assert nodal and nodal[0]["node"] is not None and nodal[0]["excess"] > 0


def test_single_entry_vacuous(robin_small):
    forms, eig = robin_small
    b = sweep(forms, builtin("sub_f1"), [eig.lambda_hat_1 - 1.0], n_starts=3, eig=eig)
    rep = check_monotone(b)
    assert rep.passed and rep.violations == []


def test_left_continuity(sub_branch):
    lam_star = sub_branch.lambda_hat_1 - 1.0
    rep = check_left_continuity(sub_branch, lam_star, n_approach=5, delta=1.0, n_starts=3)
    assert len(rep.gaps) == 5
    assert all(b < a for a, b in zip(rep.gaps, rep.gaps[1:]))
    assert rep.offsets == [2.0 ** -k for k in range(1, 6)]
    assert len(rep.gradient_gaps) == 5


def test_left_continuity_default_tolerance(sub_branch):
    lam_star = sub_branch.lambda_hat_1 - 1.0
    rep = check_left_continuity(sub_branch, lam_star, n_approach=20, delta=1.0, n_starts=3)
    assert rep.passed, rep.message
    assert rep.gaps[-1] <= 1e-4


def test_left_continuity_not_applicable(sub_branch):
    rep = check_left_continuity(sub_branch, sub_branch.lambda_grid[-1])
    assert rep.status == "NotApplicable"


def test_summarize_bracket(sub_branch):
    s = summarize(sub_branch)
    lam1 = sub_branch.lambda_hat_1
    lo, hi = s["threshold"]["bracket"]
    assert lo < hi
    assert lo <= lam1 <= hi
    assert hi - lo <= 1.0 + DEFAULT_TOL.tol_eig
    assert s["tally"] == {"Uniqueness": 3, "Nonexistence": 1}
    assert s["monotone"]["passed"]
    assert "unique" in s["verdict"]


def test_summarize_all_nonexistence(robin_small):
    forms, eig = robin_small
    lam1 = eig.lambda_hat_1
    b = sweep(forms, builtin("sub_f1"), [lam1 + 0.5, lam1 + 1.0], n_starts=3, eig=eig)
    s = summarize(b)
    assert s["threshold"]["estimate"] == f"<= {lam1 + 0.5!r}"
    assert s["threshold"]["largest_existence"] is None


def test_warm_and_cold_agree(robin_small):
    forms, eig = robin_small
    nl = builtin("sub_f1")
    grid = [eig.lambda_hat_1 - 1.5, eig.lambda_hat_1 - 0.75, eig.lambda_hat_1 - 0.25]
    warm = sweep(forms, nl, grid, n_starts=4, eig=eig, warm_start=True)
    cold = sweep(forms, nl, grid, n_starts=4, eig=eig, warm_start=False)
    for a, b in zip(warm.entries, cold.entries):
        assert a.status == b.status
        assert np.max(np.abs(a.u - b.u)) <= DEFAULT_TOL.uniq_tol


def test_parallel_matches_serial(robin_small):
    forms, eig = robin_small
    nl = builtin("sub_f1")
    grid = [eig.lambda_hat_1 - 1.0, eig.lambda_hat_1 - 0.5, eig.lambda_hat_1 + 0.5]
    one = sweep(forms, nl, grid, n_starts=4, eig=eig, warm_start=False, workers=1)
    two = sweep(forms, nl, grid, n_starts=4, eig=eig, warm_start=False, workers=2)
    assert one.to_csv() == two.to_csv()


def test_csv_is_reproducible(robin_small, tmp_path):
    forms, eig = robin_small
    nl = builtin("sub_f1")
    grid = [eig.lambda_hat_1 - 1.0, eig.lambda_hat_1 + 0.5]
    a = sweep(forms, nl, grid, n_starts=4, seed=7, eig=eig)
    b = sweep(forms, nl, grid, n_starts=4, seed=7, eig=eig)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    a.to_csv(pa)
    b.to_csv(pb)
    assert pa.read_bytes() == pb.read_bytes()
    rows = list(csv.DictReader(io.StringIO(a.to_csv())))
    assert [r["status"] for r in rows] == ["Uniqueness", "Nonexistence"]
    assert rows[1]["energy"] == "" and rows[1]["u_max"] == ""
    assert float(rows[0]["lambda"]) == grid[0]


def test_failures_are_recorded(robin_small):
    forms, eig = robin_small
    # an overstated c1 makes the auxiliary solve collapse, which the sweep records
    from robinlab.nonlinearity import Nonlinearity

    nl = Nonlinearity.from_expression("x**(1/2)", "H4", q=1.5, c1=10.0)
    b = sweep(forms, nl, [-1.0, eig.lambda_hat_1 + 0.5], n_starts=3, eig=eig)
    assert b.entries[0].status == "Failed"
    assert b.entries[0].error
    assert b.entries[1].status == "Nonexistence"
    assert repr(-1.0) in summarize(b)["failures"]
