//! Monte Carlo toolkit for on/off branching populations built from marked
//! Brownian excursions: conditioned excursion sampling, h-erasure into
//! genealogical trees, lifetime marks with inserted dormancy, the coupled
//! particle constructions, and batch experiments that verify their laws
//! against closed forms.

pub mod cloud;
pub mod erasure;
pub mod error;
pub mod excursion;
pub mod experiments;
pub mod motion;
pub mod particles;
pub mod rng;
pub mod stats;

pub use cloud::{AtomicMeasure, Cloud, CloudParams, SemigroupMatrix, SnakeItem};
pub use erasure::{AlternatingWalk, Edge, ErasedTree, TreeStats, WalkPoint};
pub use error::{Error, Result};
pub use excursion::{DowncrossReport, Excursion, GridPath};
pub use experiments::{Check, Counters, ExperimentReport};
pub use motion::{EdgeMarks, Passage, PassageTable, SpatialCache, Subordinator, TreeMarks};
pub use particles::{Atom, ForwardCounts};
pub use rng::SimRng;
pub use stats::TestReport;
