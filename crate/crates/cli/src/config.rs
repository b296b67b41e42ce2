//! Job configuration documents.

use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;
use theta_forge::cones::ConePair;
use theta_forge::exact::{parse_rat, Rat};
use theta_forge::theta::{Kernel, ThetaSpec, TruncationPolicy};
use theta_forge::{BilinearForm, QuadratureSpec};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub bilinear_form: Vec<Vec<i64>>,
    pub cone_pair: ConePairConfig,
    #[serde(default)]
    pub theta: Option<ThetaConfig>,
    #[serde(default)]
    pub policy: Option<PolicyConfig>,
    #[serde(default)]
    pub quadrature: Option<QuadratureConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConePairConfig {
    pub c: Vec<Vec<f64>>,
    pub cprime: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Holomorphic,
    Completed,
}

/// A rational given as an integer, a string `"a/b"`, or `{"num": "a", "den": "b"}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RatInput {
    Int(i64),
    Text(String),
    Parts { num: String, den: String },
}

impl RatInput {
    fn to_rat(&self) -> Option<Rat> {
        match self {
            RatInput::Int(i) => Some(Rat::from_integer((*i).into())),
            RatInput::Text(s) => parse_rat(s),
            RatInput::Parts { num, den } => parse_rat(&format!("{num}/{den}")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaConfig {
    #[serde(default)]
    pub mu: Option<Vec<RatInput>>,
    #[serde(default)]
    pub p: Option<Vec<i64>>,
    #[serde(default)]
    pub b: Option<Vec<f64>>,
    #[serde(default)]
    pub c_ell: Option<Vec<f64>>,
    #[serde(default)]
    pub tau: Option<[f64; 2]>,
    pub kernel: KernelName,
    #[serde(default)]
    pub lambda: i64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub nodes_per_axis: usize,
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    pub fn cone_pair(&self) -> Result<ConePair, CliError> {
        let form = BilinearForm::from_rows(&self.bilinear_form).map_err(|e| CliError::validation(format!("bilinear_form: {e}")))?;
        ConePair::from_f64_columns(form, &self.cone_pair.c, &self.cone_pair.cprime).map_err(|e| CliError::validation(format!("cone_pair: {e}")))
    }

    pub fn quadrature(&self) -> Result<QuadratureSpec, CliError> {
        let q = match &self.quadrature {
            Some(q) => QuadratureSpec::with_nodes(q.nodes_per_axis),
            None => QuadratureSpec::default(),
        };
        q.validate().map_err(|e| CliError::validation(format!("quadrature: {e}")))?;
        Ok(q)
    }

    pub fn policy(&self) -> TruncationPolicy {
        let mut policy = TruncationPolicy::default();
        if let Some(p) = &self.policy {
            if let Some(t) = p.tol {
                policy.tol = t;
            }
            if let Some(m) = p.max_points {
                policy.max_points = m;
            }
        }
        policy
    }

    pub fn theta_spec(&self) -> Result<ThetaSpec, CliError> {
        let t = self.theta.as_ref().ok_or_else(|| CliError::validation("config has no theta section".into()))?;
        let kernel = match t.kernel {
            KernelName::Holomorphic => Kernel::Holomorphic,
            KernelName::Completed => Kernel::Completed,
        };
        let mut spec = ThetaSpec::new(self.cone_pair()?, kernel);
        if let Some(mu) = &t.mu {
            spec.mu = mu
                .iter()
                .enumerate()
                .map(|(i, m)| m.to_rat().ok_or_else(|| CliError::validation(format!("theta.mu[{i}] is not a rational"))))
                .collect::<Result<_, _>>()?;
        }
        if let Some(p) = &t.p {
            spec.p = p.clone();
        }
        if let Some(b) = &t.b {
            spec.b = b.clone();
        }
        if let Some(c) = &t.c_ell {
            spec.c_ell = c.clone();
        }
        if let Some([re, im]) = t.tau {
            spec.tau = Complex64::new(re, im);
        }
        spec.lambda = t.lambda;
        spec.quadrature = self.quadrature()?;
        Ok(spec)
    }
}
