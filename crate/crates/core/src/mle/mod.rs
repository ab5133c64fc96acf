//! Frequentist comparator: Monte-Carlo marginal likelihood maximized by a
//! damped Newton method.

pub mod draws;
pub mod objective;
pub mod optim;
pub mod tpjm;

pub use draws::{halton, DrawSet};
pub use objective::{Derivatives, MarginalModel, McObjective};
pub use optim::{maximize, standard_errors, Criteria, MarquardtOptions, Objective, OptimResult};
pub use tpjm::{fit_mle, mc_marginal_loglik, mle_estimates, mle_start, MleOptions, MleResult, ParamLayout, TpjmMarginal};
