//! Numerical laboratory for discrete magnetic random Schrödinger operators of alloy type
//! and the fluctuations of their integrated density of states.

pub mod disorder;
pub mod experiments;
pub mod geometry;
pub mod magnetic;
pub mod spectral;
pub mod stats;
pub mod testfun;

pub use disorder::{
    alloy_potential, conditional_resample, derive_seed, sample_configuration, scale_coordinate,
    sup_bound, ConditioningMask, Configuration, DisorderError, SingleSite, SiteDistribution,
    StreamKey,
};
pub use geometry::{
    annuli_plan, build_box, index_set, interior, interior_index_set, BoundaryCondition, BoxSpec,
    DecompositionPlan, Exponents, GeometryError, IndexSet, LatticePoint, MeshPoint, Region,
    RegionLabel,
};
pub use magnetic::{
    assemble, assemble_region, magnetic_translate, peierls_phase, DiscreteHamiltonian,
    MagneticField, OperatorError, Potential,
};
