//! Model and engine configuration read from TOML.
//!
//! Every key is optional; omitted keys take the simulation-design defaults.
//!
//! ```toml
//! [model]
//! binary = ["1", "time", "trt", "time:trt"]
//! continuous = ["1", "time", "trt", "time:trt"]
//! survival = ["trt"]
//! random_effects = "intercepts"      # or "intercepts+slope"
//! baseline_bins = 15
//! follow_up_max = 4.0
//! rw_order = 2
//!
//! [priors]
//! fixed_effect_prec = 1e-3
//! assoc_prec = 1e-3
//! assoc_mean = 0.0
//! pc_eps = [1.0, 0.01]               # (w, v) with P(σ > w) = v
//! pc_rw = [1.0, 0.01]
//! pc_re = [[1.0, 0.01], [1.0, 0.01]]
//! corr_prior_sd = 1.0
//!
//! [inla]
//! strategy = "ccd"                   # "eb", "grid" or "ccd"
//! laplace_shift = false
//!
//! [mle]
//! n_points = 1000
//! seed = 1
//! max_iter = 500
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use tpjm_core::inla::{ExploreOptions, Strategy};
use tpjm_core::mle::MleOptions;
use tpjm_core::model::{build_spec, ModelConfig, PcPrior, PriorConfig, ReStructure, TpjmSpec};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub priors: PriorSection,
    #[serde(default)]
    pub inla: InlaSection,
    #[serde(default)]
    pub mle: MleSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub binary: Option<Vec<String>>,
    pub continuous: Option<Vec<String>>,
    pub survival: Option<Vec<String>>,
    pub random_effects: Option<String>,
    pub baseline_bins: Option<usize>,
    pub follow_up_max: Option<f64>,
    pub rw_order: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub fixed_effect_prec: Option<f64>,
    pub assoc_prec: Option<f64>,
    pub assoc_mean: Option<f64>,
    pub pc_eps: Option<[f64; 2]>,
    pub pc_rw: Option<[f64; 2]>,
    pub pc_re: Option<Vec<[f64; 2]>>,
    pub corr_prior_sd: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlaSection {
    pub strategy: Option<String>,
    pub laplace_shift: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleSection {
    pub n_points: Option<usize>,
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
}

pub fn parse_re_structure(s: &str) -> Result<ReStructure> {
    match s {
        "intercepts" | "2" => Ok(ReStructure::InterceptsOnly),
        "intercepts+slope" | "3" => Ok(ReStructure::InterceptPlusSlope),
        _ => Err(CliError::Config(format!("random_effects must be \"intercepts\" or \"intercepts+slope\", got \"{s}\""))),
    }
}

pub fn parse_strategy(s: &str) -> Result<Strategy> {
    match s.to_ascii_lowercase().as_str() {
        "eb" => Ok(Strategy::EmpiricalBayes),
        "grid" => Ok(Strategy::Grid),
        "ccd" => Ok(Strategy::Ccd),
        _ => Err(CliError::Config(format!("unknown integration strategy \"{s}\""))),
    }
}

/// Everything needed to fit a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub model: ModelConfig,
    pub priors: PriorConfig,
    pub inla: ExploreOptions,
    pub mle: MleOptions,
}

impl Resolved {
    pub fn spec(&self, available: &[&str]) -> Result<TpjmSpec> {
        Ok(build_spec(&self.model, available)?)
    }
}

fn pc(p: [f64; 2]) -> Result<PcPrior> {
    PcPrior::new(p[0], p[1]).map_err(|e| CliError::Config(e.to_string()))
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies defaults; `re` overrides the random-effect structure when the
    /// file leaves it unset.
    pub fn resolve(&self, re: Option<ReStructure>) -> Result<Resolved> {
        let m = &self.model;
        let re = match &m.random_effects {
            Some(s) => parse_re_structure(s)?,
            None => re.unwrap_or(ReStructure::InterceptsOnly),
        };
        let mut model = ModelConfig::scenario(re);
        if let Some(v) = &m.binary {
            model.binary_terms = v.clone();
        }
        if let Some(v) = &m.continuous {
            model.continuous_terms = v.clone();
        }
        if let Some(v) = &m.survival {
            model.survival_terms = v.clone();
        }
        model.baseline_bins = m.baseline_bins.unwrap_or(model.baseline_bins);
        model.follow_up_max = m.follow_up_max.unwrap_or(model.follow_up_max);
        model.rw_order = m.rw_order.unwrap_or(model.rw_order);

        let d = re.dim();
        let p = &self.priors;
        let mut priors = PriorConfig::default_for(d);
        priors.fixed_effect_prec = p.fixed_effect_prec.unwrap_or(priors.fixed_effect_prec);
        priors.assoc_prec = p.assoc_prec.unwrap_or(priors.assoc_prec);
        priors.assoc_mean = p.assoc_mean.unwrap_or(priors.assoc_mean);
        priors.corr_prior_sd = p.corr_prior_sd.unwrap_or(priors.corr_prior_sd);
        if let Some(x) = p.pc_eps {
            priors.pc_eps = pc(x)?;
        }
        if let Some(x) = p.pc_rw {
            priors.pc_rw = pc(x)?;
        }
        if let Some(v) = &p.pc_re {
            priors.pc_re = v.iter().map(|x| pc(*x)).collect::<Result<_>>()?;
        }
        priors.validate(d).map_err(|e| CliError::Config(e.to_string()))?;

        let mut inla = ExploreOptions::default();
        if let Some(s) = &self.inla.strategy {
            inla.strategy = parse_strategy(s)?;
        }
        inla.laplace_shift = self.inla.laplace_shift.unwrap_or(false);

        let mut mle = MleOptions::default();
        mle.n_points = self.mle.n_points.unwrap_or(mle.n_points);
        mle.seed = self.mle.seed.unwrap_or(mle.seed);
        mle.marquardt.max_iter = self.mle.max_iter.unwrap_or(mle.marquardt.max_iter);
        if mle.n_points < 2 || mle.n_points % 2 == 1 {
            return Err(CliError::Config(format!("mle.n_points must be even and at least 2, got {}", mle.n_points)));
        }
        Ok(Resolved { model, priors, inla, mle })
    }
}
