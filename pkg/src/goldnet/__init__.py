"""goldnet: symmetry-equivariant deep networks and the mean-field theory of
their initialization dynamics.

Subpackages:

* numcore   -- RNG, quadrature, Bessel I1, Jacobi eigensolver, effective rank
* layers    -- equivariant layer families, group actions, initialization
* autodiff  -- reverse-mode tape over the fixed primitive set
* meanfield -- order-parameter and two-replica covariance recursions
* ensemble  -- empirical ensembles vs. theory (order parameter, phase
               conservation, protected Jacobian, effective rank)
* cells / training -- classifiers, recurrent cells, optimizers, BPTT loops
* tasks     -- IDX ingestion, pixel-sequence tasks, variable-delay copy task
* topo      -- winding numbers and vortex statistics of 2-D phase fields
* cli       -- command-line front end (`goldnet --help`)
"""

__version__ = "0.1.0"
