"""
Looking for positive solutions with f(x) = x^2

-u'' = lam u + u^2 with Robin ends.  Now the energy is unbounded below, so
the zero solution is a local minimum and positive solutions sit at
mountain passes.  We find one by relaxing a path from 0 to a far point,
compare it with a shooting solution of the ODE, and then try the second
mountain pass above it, which on this benchmark finds no new solution:
the shooting scan below shows there is only one.
"""
import numpy as np
from scipy.integrate import solve_ivp

from robinlab import builtin, principal_eigenpair
from robinlab.forms import ScalarField, VariationalProblem, assemble
from robinlab.mesh import build_interval_mesh
from robinlab.nonlinearity import check_hypotheses, make_truncation
from robinlab.solvers import (PathCollapseError, find_endpoint, k_problem, mountain_pass,
                              shift_of)

forms = assemble(build_interval_mesh(0, 1, 1024), ScalarField.constant(0.0),
                 ScalarField.constant(1.0, "boundary"))
eig = principal_eigenpair(forms)
nl = builtin("super_f1", q=3.0)
print("AR condition:", check_hypotheses(nl).clause("AR").witness)

lam = eig.lambda_hat_1 - 1.0
prob = k_problem(forms, nl, lam)
far = find_endpoint(prob, eig.u_hat_1, ref_energy=0.0)
sol = mountain_pass(prob, np.zeros(forms.n), far)
print(f"\nlambda = {lam:.6f}: mountain pass {sol.status} after {sol.iterations} steps, "
      f"u(0) = {sol.u[0]:.8f}, max u = {sol.u.max():.6f}, energy = {sol.energy:.6f}")


def mismatch(u0):
    # shoot from x = 0 with u'(0) = u(0) and measure the right Robin condition
    rhs = lambda x, y: [y[1], -lam * y[0] - max(y[0], 0.0) ** 2]
    s = solve_ivp(rhs, (0, 1), [u0, u0], rtol=1e-11, atol=1e-13)
    return s.y[1, -1] + s.y[0, -1]


grid = np.geomspace(1e-3, 50, 400)
vals = [mismatch(g) for g in grid]
roots = [0.5 * (a + b) for a, b, fa, fb in zip(grid, grid[1:], vals, vals[1:]) if fa * fb < 0]
print("shooting: sign changes of the right boundary mismatch near u(0) =",
      [f"{r:.4f}" for r in roots])

mu = shift_of(forms)
tilde = VariationalProblem.from_reaction(forms, make_truncation("GTilde", nl, lam, mu, lo=sol.u))
try:
    far2 = find_endpoint(tilde, eig.u_hat_1, ref_energy=tilde.energy(sol.u), base=sol.u)
    second = mountain_pass(tilde, sol.u, far2, lower=sol.u)
    print("second solution above the first:", second.status, second.u.max())
except PathCollapseError as exc:
    print("second mountain pass above the first solution:", exc)
