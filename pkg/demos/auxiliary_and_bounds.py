"""
The auxiliary problem and the lower bound

For a concave-type reaction the solutions of -u'' = lam u + f(u) all lie
above the unique positive solution u* of a simpler problem with reaction
c1 u^(q-1) - c4 u^(tau-1).  Here we compute u* for a few lam, the actual
solution, and print how far apart they are.
"""
import numpy as np

from robinlab import builtin, principal_eigenpair
from robinlab.forms import ScalarField, assemble
from robinlab.mesh import build_interval_mesh
from robinlab.nonlinearity import unilateral_constants
from robinlab.solvers import certify, solve_auxiliary

forms = assemble(build_interval_mesh(0, 1, 512), ScalarField.constant(0.0),
                 ScalarField.constant(1.0, "boundary"))
eig = principal_eigenpair(forms)
for name in ("sub_f1", "h2_f4", "h3_f2"):
    nl = builtin(name)
    print(f"\n{name}: f(x) = {nl.description}")
    for lam in (-2.0, -1.0, 0.0, eig.lambda_hat_1 - 0.5):
        c4 = unilateral_constants(nl, lam)
        aux = solve_auxiliary(nl, lam, forms, eig=eig)
        cert = certify(lam, forms, nl, n_starts=4, eig=eig)
        print(f"  lambda={lam:7.3f}  c4={c4:8.4f}  max u*={aux.u.max():8.4f}  "
              f"max u={cert.u.max():8.4f}  min(u - u*)={np.min(cert.u - aux.u):.3e}  [{cert.kind}]")
