//! Planning and simulation toolkit for parameter-perturbing behavioral
//! interventions on a progress gridworld.
//!
//! The toolkit has two sides. The *user* side ([`model`]) scores a march
//! toward a goal against abstaining, in closed form, from reward and belief
//! parameters. The *app* side ([`planner`]) plans one-shot parameter
//! perturbations ([`intervention`]) that flip that decision, using a tabular
//! solver ([`oracle`]) both as planning machinery and as an independent check
//! on the closed forms. [`sim`] rolls planned policies against the true world
//! dynamics, and [`experiments`] packages the standard reproduction pipelines.

pub mod error;
pub mod experiments;
pub mod intervention;
pub mod model;
pub mod oracle;
pub mod planner;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
