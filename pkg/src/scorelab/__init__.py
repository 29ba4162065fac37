"""scorelab: a desk-scale laboratory for score-based diffusion on manifolds.

Modules
-------
geometry       analytic embedded test manifolds, sampling, eps-nets
diffusion      forward OU process, exact scores, denoising losses
fit            local polynomial manifold estimation
samplers       classic and modified reverse-process discretizations
estimators     structured ReLU score estimators and ERM training
metrics        exact Wasserstein, Gaussian KL, bound checks
concentration  Monte Carlo verification of high-probability bounds
cli            the `lab` experiment runner
"""

__version__ = "0.1.0"
