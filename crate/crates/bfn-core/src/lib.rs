//! Observer-based state and initial-state estimation for the time-varying
//! transport equation on a periodic 1D domain.
//!
//! The crate is organized around the estimation pipeline:
//!
//! - [`function_space`]: uniform periodic grids and the discrete L² structure
//!   that every other module works against.
//! - [`transport`]: the exact two-parameter propagator of
//!   `dz/dt = -G(t) dz/dx` with periodic boundary conditions, by
//!   characteristics with spectral or linear interpolation.
//! - [`observation`]: output operators with exact discrete adjoints, either a
//!   restriction to a spatial window or a chord-length integral kernel.
//! - [`gramian`]: the observability Gramian, its spectrum, the observable
//!   subspace and its orthogonal projector, and the swept-window geometric
//!   test.
//! - [`observers`]: forward/backward Luenberger observers with Strang
//!   splitting, the back-and-forth nudging (BFN) iteration, and convergence
//!   diagnostics.
//! - [`crystallization`]: the batch-crystallization scenario that
//!   reconstructs a crystal size distribution from chord-length measurements.

pub mod crystallization;
pub mod error;
pub mod function_space;
pub mod gramian;
pub mod observation;
pub mod observers;
pub mod transport;

pub use crystallization::{CrystObserverKind, CrystallizationScenario, ReconstructionReport};
pub use error::Error;
pub use function_space::{GridFunction, ObservationGrid, PeriodicGrid};
pub use gramian::GramianAnalysis;
pub use observation::{CldKernelObserver, Observation, ObservationOperator, WindowObserver};
pub use observers::{BfnRun, Direction, ObserverConfig, ObserverTrajectory, OutputRecord, Scheme};
pub use transport::{Interpolation, TransportPropagator, VelocityProfile};

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
