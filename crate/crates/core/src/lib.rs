//! Orthogonal gradient projection for safety alignment (OGPSA).
//!
//! Safety gradients are projected onto the orthogonal complement of a
//! low-rank subspace spanned by capability (reference) gradients, which is
//! re-estimated every `K` steps. The crate provides the linear algebra,
//! small differentiable models, synthetic task families with controllable
//! interference, the training loop with naive and replay baselines, tax
//! metrics, and independent verification oracles.
//!
//! ```
//! use ogpsa::linalg::{gram_schmidt, project_complement, ParamVector};
//!
//! let u = ParamVector::new(vec![1.0, 0.0]).unwrap();
//! let basis = gram_schmidt(&[u], 1e-9, 0.0).unwrap();
//! let g = ParamVector::new(vec![1.0, 1.0]).unwrap();
//! assert_eq!(project_complement(&g, &basis).unwrap().as_slice(), &[0.0, 1.0]);
//! ```

pub mod dataset;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod optimizer;
pub mod presets;
pub mod oracle;
pub mod rng;
pub mod subspace;
pub mod tasks;

pub use error::{Error, Result};
pub use exec::Execution;
pub use linalg::{gram_schmidt, project_complement, OrthonormalBasis, ParamVector};
pub use optimizer::{train, Method, Stage, TrainConfig, TrainResult};
pub use subspace::{CapabilitySubspace, RefreshPeriod};
pub use tasks::{make_family, Family, FamilyConfig, FamilyKind};
