"""A tour of the GP layer: build a small geometric program, solve it, then
look at the monomial lower bound that the power allocator relies on.

Run with ``python3 demos/01_geometric_programs.py``.
"""

import numpy as np

from beamsched.gpcore import GPProblem, Monomial, amgm_condense, amgm_weights, solve_gp

x, y = Monomial.var("x"), Monomial.var("y")

# Box design: maximise the volume x*y*h is awkward, so we minimise a
# posynomial cost with a posynomial budget and a monomial aspect limit.
cost = 2 * x * y + 1 / (x * y) + 0.5 * x / y
prob = GPProblem.minimize(cost, [0.25 * x + 0.25 * y, x / (4 * y)])
sol = solve_gp(prob)
print(f"status {sol.status}, objective {sol.objective:.6f}")
print(f"x = {sol.x['x']:.6f}, y = {sol.x['y']:.6f}, {sol.newton_steps} Newton steps")
print(f"constraint multipliers {np.round(sol.ineq_multipliers, 6)}")

# The objective is convex in log space, so a coarse log grid agrees.
grid = np.exp(np.linspace(-3, 3, 601))
X, Y = np.meshgrid(grid, grid, indexing="ij")
vals = 2 * X * Y + 1 / (X * Y) + 0.5 * X / Y
vals[(0.25 * X + 0.25 * Y > 1) | (X / (4 * Y) > 1)] = np.inf
print(f"log grid minimum {vals.min():.6f}")

# Condensation: a posynomial is bounded below by one monomial that touches it
# at the expansion point. The weights are each term's share of the value there.
f = 1 + x + 3 * y
x0 = {"x": 2.0, "y": 0.5}
g = amgm_condense(f, x0)
print(f"\nweights at x0: {np.round(amgm_weights(f, x0), 4)}")
print(f"condensed monomial: {g}")
for pt in (x0, {"x": 1.0, "y": 1.0}, {"x": 5.0, "y": 0.1}):
    print(f"  at {pt}: f = {f(pt):.4f}, bound = {g(pt):.4f}")
