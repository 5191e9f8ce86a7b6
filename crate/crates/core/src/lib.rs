//! Manual tours and slice tours for high-dimensional data.
//!
//! A d-dimensional projection of p-dimensional data is held as a p×d
//! orthonormal [`ProjectionMatrix`]. The [`manual`] module moves one
//! variable's axis to a chosen position, [`slicing`] selects the points near
//! a projection plane through a chosen center, and [`session`] wires both
//! into a message-driven viewer state.

pub mod data;
pub mod error;
pub mod linalg;
pub mod manual;
pub mod session;
pub mod slicing;

pub use data::{ClassifierGrid, DataSet, GridSpec, LdaModel};
pub use error::{Result, TourError};
pub use linalg::{gram_schmidt, project, Basis, ProjectionMatrix};
pub use manual::{ManualRequest, TourPath, UpdateMethod, Updater};
pub use session::{Message, Reply, Session, SessionConfig, TourFrame};
pub use slicing::{slice_distances, SliceResult, SliceSpec};
