"""Volume-constrained Allen-Cahn on flat tori: solutions, linearization, degeneracy."""

__version__ = "0.1.0"

from .field import AugmentedVector, Field, TorusGrid
from .manifold import (MetricSpec, Sphere, Torus, conformal_modes, counting_function,
                       laplacian_spectrum, sphere, torus, volume)
from .potential import (Potential, double_well, nemytskii_B, nemytskii_dB, polynomial,
                        potential_eval, validate_growth)
from .operators import (MetricTangent, apply_A, b_tensor, dA_direction, dE_direction, dF_full,
                        dF_map, energy_E, F_map, inner_H, integrate, J_gradient, J_hessian,
                        J_value)
from .solver import (MaxIterExceeded, SingularJacobian, Solution, continuation, gradient_flow,
                     newton_solve)
from .degeneracy import (DegeneracyReport, cokernel_check, constant_solution,
                         degenerate_epsilons, linearized_apply, min_singular, morse_lower_bound)
