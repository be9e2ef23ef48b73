//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use bdstein::bdp::BirthDeathRates;
use bdstein::intertwine::{ContractionVariant, Relation, TestFunction};
use bdstein::measures::{ModelMeasure, PhiShape, WeightFamily, WeightSequence};
use bdstein::mixture::{DistanceClass, MixingLaw};
use bdstein::stein::{ClosedFormModel, DiagKind, FactorClass, FactorOrder, IndexSet, PointwiseLemma};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Output encoding of the report files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub format: Format,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub u: WeightFamily,
    pub v: WeightFamily,
}

/// `len` values of a family; explicit tables keep their own length.
pub fn weight_sequence(family: &WeightFamily, len: usize) -> bdstein::Result<WeightSequence> {
    match family {
        WeightFamily::Table { values } => WeightSequence::from_values(values.clone()),
        _ => WeightSequence::from_family(family, len),
    }
}

/// A named birth-death model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub rates: BirthDeathRates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub relations: Vec<Relation>,
    pub contractions: Vec<ContractionVariant>,
    pub test_functions: Vec<TestFunction>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            relations: vec![
                Relation::FirstForward,
                Relation::FirstBackward,
                Relation::SecondStar,
                Relation::SecondPlain,
            ],
            contractions: vec![ContractionVariant::Star, ContractionVariant::Plain],
            test_functions: vec![
                TestFunction::CappedIdentity { cap: 40.0 },
                TestFunction::RandomBounded { seed: 17, window: 60 },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorsConfig {
    pub classes: Vec<FactorClass>,
    pub orders: Vec<FactorOrder>,
}

impl Default for FactorsConfig {
    fn default() -> Self {
        FactorsConfig {
            classes: vec![FactorClass::Bounded, FactorClass::Indicator, FactorClass::Lipschitz],
            orders: vec![FactorOrder::First, FactorOrder::Second],
        }
    }
}

/// `int_0^inf e^{-sigma t} (a + b s(t)) dt` for the process with the given rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegralSpec {
    pub name: String,
    pub rates: BirthDeathRates,
    pub sigma: f64,
    pub kind: DiagKind,
    pub index_set: IndexSet,
    pub affine: [f64; 2],
    /// Absolute accuracy of the quadrature.
    #[serde(default = "default_integral_tolerance")]
    pub tolerance: f64,
}

fn default_integral_tolerance() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub closed_forms: Vec<ClosedFormModel>,
    pub lemmas: Vec<PointwiseLemma>,
    pub integrals: Vec<IntegralSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureCase {
    pub name: String,
    pub phi: PhiShape,
    pub mixing: MixingLaw,
    pub classes: Vec<DistanceClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricCase {
    pub name: String,
    pub rho: f64,
    pub mixing: MixingLaw,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureConfig {
    pub cases: Vec<MixtureCase>,
    pub geometric: Vec<GeometricCase>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    pub mu: ModelMeasure,
    pub nu: ModelMeasure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationKind {
    /// Raw trajectories.
    Paths,
    /// `E[d_u f(X_{u,t}) exp(-int V_u)]` against the matrix value of `d_u P_t f`.
    FeynmanKac,
    /// Coupled paths from `x0` and `x0 + 1` against the same reference.
    Coupling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub kind: SimulationKind,
    pub rates: BirthDeathRates,
    pub x0: usize,
    pub horizon: f64,
    pub n_paths: usize,
    pub f: TestFunction,
    /// Accepted deviation in standard errors.
    pub z_max: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            kind: SimulationKind::FeynmanKac,
            rates: BirthDeathRates::mm_infinity(1.0).expect("valid default rates"),
            x0: 2,
            horizon: 1.0,
            n_paths: 10_000,
            f: TestFunction::CappedIdentity { cap: 20.0 },
            z_max: 4.0,
        }
    }
}

/// A complete experiment. Every section has a default, so a config file only
/// lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub truncation: usize,
    pub margin: usize,
    pub times: Vec<f64>,
    pub tolerance: f64,
    pub output: OutputConfig,
    pub weights: WeightsConfig,
    pub models: Vec<ModelSpec>,
    pub verify: VerifyConfig,
    pub factors: FactorsConfig,
    pub bounds: BoundsConfig,
    pub mixture: MixtureConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<DistanceConfig>,
    pub simulate: SimulateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 20_240_601,
            truncation: 200,
            margin: bdstein::DEFAULT_MARGIN,
            times: vec![0.1, 1.0, 3.0],
            tolerance: 1e-9,
            output: OutputConfig::default(),
            weights: WeightsConfig::default(),
            models: vec![ModelSpec {
                name: "mminfty(1)".into(),
                rates: BirthDeathRates::mm_infinity(1.0).expect("valid default rates"),
            }],
            verify: VerifyConfig::default(),
            factors: FactorsConfig::default(),
            bounds: BoundsConfig::default(),
            mixture: MixtureConfig::default(),
            distance: None,
            simulate: SimulateConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.truncation <= self.margin {
            return Err(CliError::Config(format!(
                "truncation {} must exceed the margin {}",
                self.truncation, self.margin
            )));
        }
        if let Some(t) = self.times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(CliError::Config(format!("time {t} must be finite and non-negative")));
        }
        if !(self.tolerance > 0.0) {
            return Err(CliError::Config(format!("tolerance {} must be positive", self.tolerance)));
        }
        Ok(())
    }
}
