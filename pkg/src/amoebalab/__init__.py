"""Classical and generalized amoebas, Ronkin functions and tropical superforms."""
from .classical import ClassicalAmoeba, ronkin_gradient, ronkin_value, rasterize_amoeba
from .generalized import (GeneralizedAmoeba, MarkedSphere, asymptotic_fan, build_marked_sphere,
                          compare_with_classical, hessian_pushforward, jacobian_rank, log_map, nondegeneracy,
                          verify_fan_limit)
from .geometry import Cone, Grid, Polytope, convex_hull, flood_components, hausdorff_distance
from .laurent import LaurentPolynomial, eval_laurent, fiber_roots, parse_laurent, support_polytope
from .potential import PotentialRecovery, potential_from_current
from .superforms import (GridField, Poly, SuperCurrent11, SuperForm, VolumeConvention, dprime, dsecond,
                         involution, is_positive, is_symmetric, tropical_integral, wedge)
from .theta import theta, theta_residual

__all__ = [
    "ClassicalAmoeba", "ronkin_gradient", "ronkin_value", "rasterize_amoeba",
    "GeneralizedAmoeba", "MarkedSphere", "asymptotic_fan", "build_marked_sphere", "compare_with_classical",
    "hessian_pushforward", "jacobian_rank", "log_map", "nondegeneracy", "verify_fan_limit",
    "Cone", "Grid", "Polytope", "convex_hull", "flood_components", "hausdorff_distance",
    "LaurentPolynomial", "eval_laurent", "fiber_roots", "parse_laurent", "support_polytope",
    "PotentialRecovery", "potential_from_current",
    "GridField", "Poly", "SuperCurrent11", "SuperForm", "VolumeConvention", "dprime", "dsecond",
    "involution", "is_positive", "is_symmetric", "tropical_integral", "wedge",
    "theta", "theta_residual",
]
