"""Spectral computations for lattice three-particle operators with resonant pair forces.

Modules
-------
torus
    Torus arithmetic, the lattice dispersion and periodic quadrature.
two_body
    Coupling normalization, Fredholm determinant, bound-state dispersion.
three_body
    Essential spectrum and Birman-Schwinger eigenvalue counts.
efimov
    Model operator, partial-wave symbols and the asymptotic coefficient.
cli
    Command-line front end (``python3 -m lattice_efimov``).
"""

from .errors import (
    AmbiguousCountWarning,
    BracketError,
    ConsistencyError,
    ConvergenceWarning,
    DomainError,
    SingularNodeError,
)
from .torus import (
    GridSpec,
    QuadratureEstimate,
    RadialLog,
    TorusVec,
    dispersion,
    grid_nodes,
    hopping_coefficients,
    lattice_green,
    quadrature,
    refine,
    wrap,
)
from .two_body import (
    BoundStateSample,
    DeterminantEval,
    ModelParams,
    band_bottom,
    band_top,
    bound_state_energy,
    compute_mu0,
    determinant,
    pair_energy,
    shifted_minimizer,
    threshold_slope,
    two_body_oracle,
)
from .three_body import (
    ChannelMin,
    CountReport,
    SymmetricKernel,
    band_edges,
    bs_assemble,
    count_above,
    cutoff_kernel,
    delta_shifted,
    direct_count_oracle,
    eigen_count_N,
    essential_spectrum,
    hs_difference,
    tau,
    total_energy,
)
from .efimov import (
    EfimovCoefficient,
    PartialWaveTable,
    efimov_coefficient,
    level_set_measure,
    partial_wave,
    s0_closed_form,
    s_hat,
    s_kernel,
    s_operator_count,
    slope_fit,
)

__version__ = "0.1.0"
