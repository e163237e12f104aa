"""varda: variational data assimilation on differentiable toy dynamics.

Subpackages
-----------
ad         tape-based reverse-mode autodiff (grad, vjp, jvp, jacobian, hessian)
models     Lorenz-96 and two-layer spectral quasi-geostrophic dynamics
integrate  fixed-step RK4 / Dormand-Prince / Adams-Bashforth-3 integrators
solvers    matrix-free BiCGSTAB
assim      4D-Var cost, incremental 4D-Var, gradient/Gauss-Newton variants,
           cycled twin experiments
surrogate  reservoir-computing surrogate forecast model
obsgen     observation networks, schedules, noise, IC perturbations
data       nature-run generation, splits, dataset persistence
metrics    RMSE, paired t-test, timing
harness    experiment orchestration and the ``varda`` CLI

States are plain 1-D float64 numpy arrays; trajectories are ``(n_steps+1, dim)``
arrays (or lists of traced variables inside a recorded window).
"""

__version__ = "0.1.0"
