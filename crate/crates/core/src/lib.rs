//! Monte Carlo and exact tools for the d-state clock model on the periodic
//! square lattice, and the entanglement measures of the deformed Z_d toric
//! code state that the model maps to.

pub mod analysis;
pub mod clock_mc;
pub mod error;
pub mod estimators;
pub mod lattice;
pub mod quantum_oracle;
pub mod runner;

pub use analysis::{
    cumulant_crossing, derivative, find_peak, fit_linear, fit_powerlaw, intersect_fits, Crossing, FitModel,
    FitResult, Intersection, Peak, Series,
};
pub use clock_mc::{run_simulation, Sampler, SimulationParams, SpinConfig, Start};
pub use error::{Error, Result};
pub use estimators::{measure, Accumulator, EdgeConvention, HistogramSet, ObservableRecord};
pub use lattice::{build_lattice, LatticeGeometry, Orientation, PairClass};
pub use quantum_oracle::{enumerate_clock, verify_mapping, ExactClockTable, MappingReport};
