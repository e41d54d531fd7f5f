"""Numeric laboratory for normal shift of hypersurfaces in geometry defined
by a regular Lagrangian: relative-form Newtonian dynamics, shift simulation
with deviation functions, and the weak/additional normality residuals."""

from .calculus import (ChartPoint, CotangentState, HamiltonianModel,
                       LagrangianModel, RegularityReport, SampleDomain,
                       TangentState, VerticalMetric, check_regularity,
                       hamiltonian_eval, inverse_legendre, legendre, mu_map,
                       omega_p, omega_v, vertical_metrics)
from .dynamics import (ForceField, NewtonianSystem, Trajectory,
                       force_from_acceleration, integrate, integrate_batch,
                       rhs_p, rhs_v)
from .expr import Expression, differentiate, parse
from .hypersurface import (DeviationSeries, Hypersurface, NormalField, NuField,
                           SecondFundamentalForm, ShiftFamily,
                           normal_covector, pfaff_compatibility_residual,
                           run_shift, sample_normals,
                           second_fundamental_form, solve_nu_curve,
                           solve_nu_grid, surface_with_prescribed_form,
                           tangent_frame)
from .normality import (DeviationODECoeffs, InvarianceReport, OperatorB,
                        PointResiduals, ResidualReport, VariationSeries,
                        VariationState, additional_residuals, b_symmetry_of_B,
                        connection_invariance_check, deviation_coefficients,
                        deviation_ode_residual, evaluate_residuals,
                        integrate_variation, variation_matrices, weak_residual_b_printed,
                        weak_residuals)
from .tensorfields import (ConnectionShift, CurvaturePair, ExtendedConnection,
                           ExtendedTensorField, FieldPoint, Projector,
                           commutator_residual, concordance_residual,
                           convert_representation, covariant_time_derivative,
                           curvature_tensors, horizontal_gradient, projector,
                           vertical_gradient)

__version__ = "0.1.0"
