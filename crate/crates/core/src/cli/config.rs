use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoreError};
use crate::experiments::{
    builtin, load_csv_dataset, BuiltinExperiment, EvalConfig, ExperimentConfig, Noise, Problem, Sampler,
    HOUSING_TARGET,
};
use crate::training::{LossSpec, TrainConfig, Variant};

/// Overrides of the built-in problem defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemOverrides {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub sigma: Option<f64>,
    pub snr: Option<f64>,
    /// CSV file for `csv_selection`.
    pub dataset: Option<PathBuf>,
    pub target: Option<String>,
    pub noise_features: Option<usize>,
    #[serde(default)]
    pub noise_seed: u64,
}

/// Explicit penalty points for DORE: `per_axis^d` grid or `count` uniform draws on `[lo, hi]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltyPoints {
    Grid { lo: f64, hi: f64, per_axis: usize },
    Uniform { lo: f64, hi: f64, count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub variant: Variant,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_points: Option<PenaltyPoints>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "one")]
    pub ensemble_size: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn one() -> usize {
    1
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: default_hidden(),
            ensemble_size: 1,
        }
    }
}

/// Contents of a `run` configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub problem: ProblemOverrides,
    pub variants: Vec<VariantConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Everything `run` needs, resolved from a [`RunConfig`].
pub struct ResolvedRun {
    pub entry: BuiltinExperiment,
    pub problem: Problem,
    pub variants: Vec<LossSpec>,
    pub experiment: ExperimentConfig,
}

fn config_err(msg: impl Into<String>) -> SdoreError {
    SdoreError::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    /// Checks cross-field rules and builds the problem; CSV files are read here.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedRun> {
        let entry = builtin(&self.experiment).ok_or_else(|| {
            config_err(format!(
                "experiment: unknown name `{}` (see `sdore list`)",
                self.experiment
            ))
        })?;
        if self.seeds.is_empty() {
            return Err(config_err("seeds: at least one seed is required"));
        }
        if self.variants.is_empty() {
            return Err(config_err("variants: at least one variant is required"));
        }
        self.train
            .validate()
            .map_err(|e| config_err(format!("train: {e}")))?;
        let p = &self.problem;

        let problem = if entry.name == "csv_selection" {
            if p.sigma.is_some() || p.snr.is_some() || p.n.is_some() || p.m.is_some() {
                return Err(config_err("problem: csv_selection takes no n, m, sigma or snr"));
            }
            let path = p
                .dataset
                .as_ref()
                .ok_or_else(|| config_err("problem.dataset: required for csv_selection"))?;
            let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            let data = load_csv_dataset(
                &path,
                p.target.as_deref().unwrap_or(HOUSING_TARGET),
                p.noise_features.unwrap_or(entry.noise_features),
                p.noise_seed,
            )
            .map_err(|e| config_err(format!("problem.dataset: {e}")))?;
            Problem::Dataset {
                name: entry.name.to_string(),
                data,
            }
        } else {
            if p.dataset.is_some() || p.target.is_some() || p.noise_features.is_some() {
                return Err(config_err("problem: dataset fields apply only to csv_selection"));
            }
            let noise = match (p.sigma, p.snr) {
                (Some(_), Some(_)) => return Err(config_err("problem: give sigma or snr, not both")),
                (Some(s), None) => Noise::Sigma(s),
                (None, Some(r)) => Noise::Snr(r),
                (None, None) => entry.noises[0],
            };
            let spec = entry
                .spec(p.n.unwrap_or(entry.n), p.m.unwrap_or(entry.m), noise)
                .expect("synthetic entry");
            spec.validate().map_err(|e| config_err(format!("problem: {e}")))?;
            Problem::Synthetic(spec)
        };

        let d = problem.dim();
        let mut variants = Vec::with_capacity(self.variants.len());
        for (i, v) in self.variants.iter().enumerate() {
            let mut spec = LossSpec::new(v.variant, v.lambda);
            spec.validate()
                .map_err(|e| config_err(format!("variants[{i}].lambda: {e}")))?;
            if let Some(pp) = &v.penalty_points {
                if v.variant != Variant::Dore {
                    return Err(config_err(format!(
                        "variants[{i}].penalty_points: only valid for variant = \"dore\""
                    )));
                }
                spec.nu_points = Some(Arc::new(
                    penalty_points(pp, d).map_err(|e| config_err(format!("variants[{i}].penalty_points: {e}")))?,
                ));
            }
            variants.push(spec);
        }
        if self.model.hidden.iter().any(|&w| w == 0) || self.model.ensemble_size == 0 {
            return Err(config_err("model: widths and ensemble_size must be positive"));
        }
        Ok(ResolvedRun {
            entry,
            problem,
            variants,
            experiment: ExperimentConfig {
                hidden: self.model.hidden.clone(),
                ensemble_size: self.model.ensemble_size,
                train: self.train.clone(),
                eval: self.eval.clone(),
            },
        })
    }
}

fn penalty_points(pp: &PenaltyPoints, d: usize) -> Result<Array2<f64>> {
    match *pp {
        PenaltyPoints::Grid { lo, hi, per_axis } => crate::experiments::GridSpec { lo, hi, per_axis }.points(d),
        PenaltyPoints::Uniform { lo, hi, count, seed } => {
            if count == 0 || !(hi > lo) {
                return Err(SdoreError::contract("need count ≥ 1 and hi > lo"));
            }
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            Ok(Sampler::uniform_cube(d, lo, hi).sample(count, &mut rng))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "example6_1"
[[variants]]
variant = "sdore"
lambda = 1e-3
"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.model.hidden, vec![64, 64]);
        assert_eq!(c.train, TrainConfig::default());
        let r = c.resolve(Path::new(".")).unwrap();
        assert_eq!(r.problem.dim(), 1);
    }

    #[test]
    fn missing_lambda_names_the_field() {
        let text = "experiment = \"example6_1\"\n[[variants]]\nvariant = \"sdore\"\n";
        let err = RunConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("lambda"), "{err}");
    }

    #[test]
    fn round_trip_through_toml() {
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.problem.sigma = Some(0.25);
        c.seeds = vec![3, 1];
        c.variants.push(VariantConfig {
            variant: Variant::Dore,
            lambda: 0.5,
            penalty_points: Some(PenaltyPoints::Grid { lo: 0.0, hi: 1.0, per_axis: 5 }),
        });
        c.eval.grid = Some(crate::experiments::GridSpec { lo: 0.05, hi: 0.95, per_axis: 50 });
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn semantic_errors() {
        let bad = |extra: &str| {
            let c = RunConfig::parse(&format!("{MINIMAL}{extra}")).unwrap();
            c.resolve(Path::new(".")).err().map(|e| e.to_string())
        };
        assert!(bad("[problem]\nsigma = 0.1\nsnr = 3.0\n").unwrap().contains("not both"));
        assert!(RunConfig::parse(&MINIMAL.replace("example6_1", "nope"))
            .unwrap()
            .resolve(Path::new("."))
            .is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}bogus = 1\n")).is_err());
        assert!(bad("[train]\nbatch_size = 0\n").unwrap().contains("train"));
    }
}
