//! Experiment files. Blocks are optional at parse time; each subcommand
//! asks for the ones it needs and missing pieces are reported by path.

use std::path::{Path, PathBuf};

use beliefmix::bp::BpConfig;
use beliefmix::encoder::{AlphaModel, ModelSpec, QuantileModel, TemperMode};
use beliefmix::fitness::{OptimizeConfig, SurrogateConfig};
use beliefmix::graph::SortCriterion;
use beliefmix::mean_field::{DklForm, XiLaw};
use beliefmix::mixture::{h_max_for_v, MixtureModel};
use beliefmix::testbed::{CensusScanConfig, DecimationConfig, DEFAULT_RHO_GRID};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub census: Option<CensusBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_field: Option<MeanFieldBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureBlock {
    pub n: usize,
    pub c: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_max: Option<f64>,
}

/// Either `alpha` (single exponent) or `alphas` + `quantiles`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<TemperMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// target mean connectivity K
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connectivity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<SortCriterion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub rho_grid: Vec<f64>,
    pub seeds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    pub bp: BpConfig,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            rho_grid: DEFAULT_RHO_GRID.to_vec(),
            seeds: 5,
            components: None,
            bp: BpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensusBlock {
    pub alphas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_starts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bp: Option<BpConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LawName {
    #[default]
    Binary,
    TanhUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FormName {
    #[default]
    Expectation,
    ClosedForm,
    Literal,
}

impl From<FormName> for DklForm {
    fn from(f: FormName) -> Self {
        match f {
            FormName::Expectation => DklForm::Expectation,
            FormName::ClosedForm => DklForm::ClosedForm,
            FormName::Literal => DklForm::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanFieldBlock {
    pub eta: f64,
    pub beta: f64,
    pub v: f64,
    #[serde(default)]
    pub rho_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub law: LawName,
    #[serde(default)]
    pub form: FormName,
    /// observed sites pull with `field_scale * rho * sqrt(v)` (1 when absent)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_scale: Option<f64>,
}

impl MeanFieldBlock {
    pub fn law(&self) -> beliefmix::Result<XiLaw> {
        match self.law {
            LawName::Binary => Ok(XiLaw::Binary),
            LawName::TanhUniform => XiLaw::tanh_uniform_for(self.v),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        self.rho_grid.clone().unwrap_or_else(|| DEFAULT_RHO_GRID.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseBlock {
    pub etas: Vec<f64>,
}

fn missing(path: &str) -> CliError {
    CliError::Config {
        path: path.to_string(),
        msg: "missing field".into(),
    }
}

fn field_path(parent: &str, inner: &str) -> String {
    // toml reports "missing field `x`"; join it onto the table path
    let key = inner
        .lines()
        .rev()
        .find_map(|l| l.split("missing field `").nth(1))
        .and_then(|rest| rest.split('`').next());
    match (parent, key) {
        (".", Some(k)) | ("", Some(k)) => k.to_string(),
        (p, Some(k)) => format!("{p}.{k}"),
        (p, None) => p.to_string(),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config {
            path: String::new(),
            msg: e.to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let parent = e.path().to_string();
            let msg = e.inner().to_string();
            CliError::Config {
                path: field_path(&parent, &msg),
                msg: msg.lines().last().unwrap_or_default().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mixture_block(&self) -> Result<&MixtureBlock, CliError> {
        self.mixture.as_ref().ok_or_else(|| missing("mixture"))
    }

    pub fn build_mixture(&self) -> Result<MixtureModel, CliError> {
        let m = self.mixture_block()?;
        let h_max = match (m.v, m.h_max) {
            (Some(v), None) => h_max_for_v(v)?,
            (None, Some(h)) => h,
            (Some(_), Some(_)) => {
                return Err(CliError::Config {
                    path: "mixture.v".into(),
                    msg: "give either v or h_max, not both".into(),
                })
            }
            (None, None) => return Err(missing("mixture.v")),
        };
        Ok(MixtureModel::generate(m.n, m.c, h_max, self.seed)?)
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let m = self.model.as_ref().ok_or_else(|| missing("model"))?;
        let spec = match &m.alphas {
            Some(alphas) => {
                let quantiles = m.quantiles.clone().ok_or_else(|| missing("model.quantiles"))?;
                ModelSpec::Quantile(QuantileModel {
                    alphas: alphas.clone(),
                    quantiles,
                    criterion: m.criterion.unwrap_or_default(),
                })
            }
            None => ModelSpec::Alpha(AlphaModel {
                alpha: m.alpha.ok_or_else(|| missing("model.alpha"))?,
                mode: m.mode.unwrap_or_default(),
                connectivity: m.connectivity,
            }),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn decimation(&self) -> Result<DecimationConfig, CliError> {
        let run = self.run.as_ref().ok_or_else(|| missing("run"))?;
        let cfg = DecimationConfig {
            rho_grid: run.rho_grid.clone(),
            seeds: run.seeds,
            master_seed: self.seed,
            components: run.components,
            bp: run.bp.clone(),
            nonconverged_dkl: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn census(&self) -> Result<(Vec<f64>, CensusScanConfig), CliError> {
        let c = self.census.as_ref().ok_or_else(|| missing("census"))?;
        let d = CensusScanConfig::default();
        let cfg = CensusScanConfig {
            random_starts: c.random_starts.unwrap_or(d.random_starts),
            master_seed: self.seed,
            match_threshold: c.match_threshold.unwrap_or(d.match_threshold),
            bp: c.bp.clone().unwrap_or(d.bp.clone()),
            ..d
        };
        if c.alphas.is_empty() {
            return Err(CliError::Config {
                path: "census.alphas".into(),
                msg: "needs at least one value".into(),
            });
        }
        Ok((c.alphas.clone(), cfg))
    }

    /// Optimizer settings with every random stream tied to `seed`.
    pub fn optimize(&self) -> Result<OptimizeConfig, CliError> {
        let mut cfg = self.optimize.clone().ok_or_else(|| missing("optimize"))?;
        cfg.cmaes.seed = self.seed;
        cfg.surrogate = SurrogateConfig {
            master_seed: self.seed,
            ..cfg.surrogate
        };
        cfg.decimation.master_seed = self.seed;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_nested_field_is_named() {
        let err = ExperimentConfig::parse("seed = 1\n[mixture]\nn = 3\n").unwrap_err();
        match err {
            CliError::Config { path, .. } => assert_eq!(path, "mixture.c"),
            e => panic!("{e}"),
        }
        let err = ExperimentConfig::parse("[mixture]\nn = 3\nc = 2\n").unwrap_err();
        match err {
            CliError::Config { path, .. } => assert_eq!(path, "seed"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn model_block_variants() {
        let cfg = ExperimentConfig::parse("seed = 0\n[model]\nalpha = 0.1\n").unwrap();
        assert!(matches!(cfg.model_spec().unwrap(), ModelSpec::Alpha(_)));
        let cfg = ExperimentConfig::parse("seed = 0\n[model]\nalphas = [0.1, 0.2]\n").unwrap();
        match cfg.model_spec().unwrap_err() {
            CliError::Config { path, .. } => assert_eq!(path, "model.quantiles"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn echo_round_trips() {
        let text = "seed = 4\n[mixture]\nn = 10\nc = 2\nv = 0.1\n[run]\nseeds = 2\n[run.bp]\ndamping = 0.3\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
