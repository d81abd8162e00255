"""Turn a two-unit rectifier net into linear inequalities and check them on a grid.

The net accepts a point when 1 - relu(a1) - relu(a2) >= 0. Written out, that
is three inequalities: one per unit and one for the pair.
"""
import numpy as np

from relu_constraints import ConstraintNet, extract_system, forward_raw, predict

net = ConstraintNet(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([-0.5, -0.5]))
system = extract_system(net)

for q in system.inequalities:
    units = [k + 1 for k in range(2) if q.subset_mask >> k & 1]
    w = q.weights + 0.0  # no negative zeros in the printout
    print(f"units {units}: {w[0]:+.1f} x {w[1]:+.1f} y {q.bias:+.1f} >= 0")

xs = np.linspace(-1, 3, 41)
grid = np.array([(x, y) for x in xs for y in xs])
# grid points lying exactly on the boundary are decided by rounding, so leave them out
grid = grid[np.abs(forward_raw(net, grid)) > 1e-9]
accepted_by_net = predict(net, grid) == 1
accepted_by_rows = system.feasible_many(grid)
print(f"{accepted_by_net.sum()} of {len(grid)} off-boundary grid points accepted; "
      f"net and inequalities disagree on {(accepted_by_net != accepted_by_rows).sum()}")

# the pair row is what cuts the corner off the box x <= 1.5, y <= 1.5
corner = np.array([1.4, 1.4])
print("corner", corner, "values", np.round(system.values(corner), 2), "->", predict(net, corner))
