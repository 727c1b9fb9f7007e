//! Wave evaluation, admissible-set constraints and the functionals 𝓛ᵃ(M_α).

mod functional;
mod gram;
mod qcqp;

pub use functional::{
    minimize_over_admissible, recover_cutoff, AdmissibleSetSpec, AlphaKey, CutoffCoefficients, InfluenceFunctional,
    InfluenceGeometry, LaMode, LaRecord,
};
pub use gram::{assemble_gram, wave_eval, wave_speeds};
pub use qcqp::{kkt_residual, project_onto_intersection, Ellipsoid, QcqpOptions, QcqpSolution, QuadraticForm};
