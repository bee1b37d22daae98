//! Experiment configuration: named JSON sections that are merged into the
//! per-experiment parameter structs. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};

use oplab_core::experiments::{
    CompareParams, CylConvergenceParams, DichotomyParams, GaussianCheckParams,
    TeacherStudentParams,
};
use oplab_core::jets::Activation;
use oplab_core::space::{BasisKind, CompactShape};
use oplab_core::targets::TargetSpec;
use oplab_core::training::TrainConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed; the `--seed` flag overrides it.
    pub seed: Option<u64>,
    /// Output directory; the `--out` flag overrides it.
    pub out: Option<String>,
    pub basis: Option<BasisSection>,
    pub compact: Option<CompactSection>,
    pub measure: Option<MeasureSection>,
    pub target: Option<TargetSpec>,
    pub model: Option<ModelSection>,
    pub train: Option<TrainConfig>,
    pub metrics: Vec<MetricRequest>,
    pub dichotomy: Option<DichotomySection>,
    pub gaussian_check: Option<GaussianCheckSection>,
    pub cyl_convergence: Option<CylSection>,
    pub teacher_student: Option<TeacherStudentSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub kind: BasisKind,
    pub ambient_dim: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompactSection {
    pub c0: f64,
    pub shape: CompactShape,
}

impl Default for CompactSection {
    fn default() -> Self {
        CompactSection {
            c0: 1.0,
            shape: CompactShape::Box,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    pub input: InputSection,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_mass")]
    pub mass: f64,
    /// Direction covariance schedule; defaults to the input schedule.
    #[serde(default)]
    pub directions: Option<EigenSchedule>,
}

fn default_k() -> usize {
    1
}
fn default_mass() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSection {
    Gaussian { eigenvalues: EigenSchedule },
}

/// Eigenvalue schedule: either an explicit list or a power expression like
/// `"i^-2"` or `"0.5*i^-1.5"`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EigenSchedule {
    Expr(String),
    Values(Vec<f64>),
}

impl EigenSchedule {
    /// Decay exponent of a pure power schedule `scale * i^-e`; experiment
    /// parameters accept only this family.
    pub fn power_exponent(&self) -> Result<f64, String> {
        match self {
            EigenSchedule::Expr(s) => parse_power(s).map(|(_, e)| e),
            EigenSchedule::Values(_) => Err(
                "experiment measures require a power schedule such as \"i^-2\"".into(),
            ),
        }
    }
}

/// Parses `"i^-2"`, `"i^2"`, or `"0.5*i^-1.5"` into `(scale, exponent)` with
/// `lambda_i = scale * i^{-exponent}`.
pub fn parse_power(expr: &str) -> Result<(f64, f64), String> {
    let cleaned = expr.replace(' ', "");
    let (scale_str, power_str) = match cleaned.split_once('*') {
        Some((a, b)) => (a.to_string(), b.to_string()),
        None => ("1".to_string(), cleaned.clone()),
    };
    let scale: f64 = scale_str
        .parse()
        .map_err(|_| format!("bad schedule scale in '{expr}'"))?;
    let rest = power_str
        .strip_prefix("i^")
        .ok_or_else(|| format!("schedule '{expr}' must look like 'i^-2'"))?;
    let signed: f64 = rest
        .parse()
        .map_err(|_| format!("bad schedule exponent in '{expr}'"))?;
    Ok((scale, -signed))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// One of `hgno`, `deeponet`, `pcanet`.
    pub family: String,
    pub d: usize,
    pub m: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            family: "hgno".into(),
            d: 8,
            m: 8,
            hidden: vec![16],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DichotomySection {
    pub ranks: Vec<usize>,
    pub n_sup: usize,
    pub n_min: usize,
}

impl Default for DichotomySection {
    fn default() -> Self {
        let d = DichotomyParams::default();
        DichotomySection {
            ranks: d.ranks,
            n_sup: d.n_sup,
            n_min: d.n_min,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianCheckSection {
    pub n_maps: usize,
    pub map_rank: usize,
    pub n_draws: usize,
    pub tolerance: f64,
    /// Minimum number of maps that must sit inside the tolerance.
    pub min_within: usize,
}

impl Default for GaussianCheckSection {
    fn default() -> Self {
        let d = GaussianCheckParams::default();
        GaussianCheckSection {
            n_maps: d.n_maps,
            map_rank: d.map_rank,
            n_draws: d.n_draws,
            tolerance: d.tolerance,
            min_within: 18,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CylSection {
    pub ranks: Vec<usize>,
    pub k: usize,
    pub p: f64,
    pub n: usize,
}

impl Default for CylSection {
    fn default() -> Self {
        let d = CylConvergenceParams::default();
        CylSection {
            ranks: d.ranks,
            k: d.k,
            p: d.p,
            n: d.n,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherStudentSection {
    pub perturbation: f64,
    pub loss_threshold: f64,
}

impl Default for TeacherStudentSection {
    fn default() -> Self {
        let d = TeacherStudentParams::default();
        TeacherStudentSection {
            perturbation: d.perturbation,
            loss_threshold: d.loss_threshold,
        }
    }
}

/// Additional estimate requested after training: written as one CSV row
/// `experiment_id,norm_kind,k,p,r,value,std_error,n`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRequest {
    pub norm_kind: MetricKind,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default = "default_metric_n")]
    pub n: usize,
    #[serde(default = "default_n_inner")]
    pub n_inner: usize,
}

fn default_p() -> f64 {
    2.0
}
fn default_metric_n() -> usize {
    20_000
}
fn default_n_inner() -> usize {
    32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Bastiani,
    Opnorm,
    Tilde,
    Mixed,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Bastiani => "bastiani",
            MetricKind::Opnorm => "opnorm",
            MetricKind::Tilde => "tilde",
            MetricKind::Mixed => "mixed",
        }
    }
}

// ---------------------------------------------------------------------------
// Section merging
// ---------------------------------------------------------------------------

impl ExperimentConfig {
    pub fn ambient_dim(&self) -> usize {
        self.basis
            .as_ref()
            .map(|b| b.ambient_dim)
            .unwrap_or(oplab_core::space::DEFAULT_AMBIENT_DIM)
    }

    fn eigen_exponent(&self) -> Result<f64, String> {
        match &self.measure {
            None => Ok(2.0),
            Some(m) => {
                let InputSection::Gaussian { eigenvalues } = &m.input;
                eigenvalues.power_exponent()
            }
        }
    }

    pub fn dichotomy_params(&self) -> Result<DichotomyParams, String> {
        let section = self.dichotomy.clone().unwrap_or_default();
        Ok(DichotomyParams {
            dim: self.ambient_dim(),
            ranks: section.ranks,
            c0: self.compact.clone().unwrap_or_default().c0,
            eigen_exponent: self.eigen_exponent()?,
            n_sup: section.n_sup,
            n_min: section.n_min,
        })
    }

    pub fn gaussian_check_params(&self) -> Result<(GaussianCheckParams, usize), String> {
        let section = self.gaussian_check.clone().unwrap_or_default();
        Ok((
            GaussianCheckParams {
                dim: self.ambient_dim(),
                eigen_exponent: self.eigen_exponent()?,
                n_maps: section.n_maps,
                map_rank: section.map_rank,
                n_draws: section.n_draws,
                tolerance: section.tolerance,
            },
            section.min_within,
        ))
    }

    pub fn cyl_params(&self) -> Result<CylConvergenceParams, String> {
        let section = self.cyl_convergence.clone().unwrap_or_default();
        let defaults = CylConvergenceParams::default();
        Ok(CylConvergenceParams {
            dim: self.ambient_dim(),
            ranks: section.ranks,
            target: self.target.clone().unwrap_or(defaults.target),
            eigen_exponent: self.eigen_exponent()?,
            k: section.k,
            p: section.p,
            n: section.n,
        })
    }

    pub fn teacher_student_params(&self) -> Result<TeacherStudentParams, String> {
        let section = self.teacher_student.clone().unwrap_or_default();
        let defaults = TeacherStudentParams::default();
        let (d, m, hidden, activation) = match &self.model {
            None => (
                defaults.d,
                defaults.m,
                defaults.hidden.clone(),
                defaults.activation,
            ),
            Some(model) => {
                if model.family != "hgno" {
                    return Err(format!(
                        "teacher-student training uses the hgno family, got '{}'",
                        model.family
                    ));
                }
                (model.d, model.m, model.hidden.clone(), model.activation)
            }
        };
        Ok(TeacherStudentParams {
            dim: if self.basis.is_some() {
                self.ambient_dim()
            } else {
                defaults.dim
            },
            d,
            m,
            hidden,
            activation,
            eigen_exponent: self.eigen_exponent()?,
            perturbation: section.perturbation,
            loss_threshold: section.loss_threshold,
            train: self.train.clone().unwrap_or(defaults.train),
        })
    }

    pub fn compare_params(&self) -> Result<CompareParams, String> {
        let model = self.model.clone().unwrap_or_default();
        let defaults = CompareParams::default();
        if model.family != "hgno" {
            return Err(format!(
                "the comparison runs on the hgno family, got '{}'",
                model.family
            ));
        }
        Ok(CompareParams {
            dim: if self.basis.is_some() {
                self.ambient_dim()
            } else {
                defaults.dim
            },
            d: model.d,
            m: model.m,
            hidden: model.hidden,
            activation: model.activation,
            eigen_exponent: self.eigen_exponent()?,
            target: self.target.clone().unwrap_or(defaults.target),
            train: self.train.clone().unwrap_or(defaults.train),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"seed": 1, "bogus": 2}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
        let nested = r#"{"measure": {"input": {"kind": "gaussian", "eigenvalues": "i^-2"}, "oops": 1}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(nested).is_err());
    }

    #[test]
    fn power_schedule_parsing() {
        assert_eq!(parse_power("i^-2").unwrap(), (1.0, 2.0));
        assert_eq!(parse_power("0.5*i^-1.5").unwrap(), (0.5, 1.5));
        assert_eq!(parse_power("i^2").unwrap(), (1.0, -2.0));
        assert!(parse_power("j^-2").is_err());
    }

    #[test]
    fn measure_section_example_form() {
        let json = r#"{
            "measure": {"input": {"kind": "gaussian", "eigenvalues": "i^-2"}, "k": 1, "mass": 1.0}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        let m = cfg.measure.unwrap();
        assert_eq!(m.k, 1);
        let InputSection::Gaussian { eigenvalues } = m.input;
        assert_eq!(eigenvalues.power_exponent().unwrap(), 2.0);
    }

    #[test]
    fn defaults_merge() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        let p = cfg.dichotomy_params().unwrap();
        assert_eq!(p.dim, 64);
        assert_eq!(p.ranks, vec![8, 16, 32]);
        assert_eq!(cfg.cyl_params().unwrap().target.name, "quadratic");
    }
}
