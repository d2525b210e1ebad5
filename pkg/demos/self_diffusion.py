"""Tagged-particle diffusion in a crowded two-colour lattice gas.

Runs the equal-rate sweep on a 100x100 torus and sets the measured
self-diffusion coefficient beside the closed-form approximations.
Takes a few seconds.
"""
from twosep.experiments import preset, run_experiment

bundle = run_experiment(preset("selfdiff_sweep_equal", seed=1))
print(f"{'phi':>5} {'measured':>10} {'+-':>7} {'composite':>10} {'low':>8} {'high':>8} {'mean-field':>10}")
for phi, ds, se, comp, low, high, mf in bundle.tables["selfdiff"].rows:
    print(f"{phi:5.2f} {ds:10.4f} {se:7.4f} {comp:10.4f} {low:8.4f} {high:8.4f} {mf:10.4f}")

# the mean-field law ignores the backlog of neighbours a walker builds up,
# so it overestimates diffusion at every density
