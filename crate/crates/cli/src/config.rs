//! Run configuration: a JSON tree naming the model, path, order parameter,
//! base measure and numerical settings.

use std::path::Path;

use parisi_core::optimize::OptimizeConfig;
use parisi_core::pde::Atom;
use parisi_core::sdecheck::Control;
use parisi_core::{BaseMeasure, DiscreteCdf, Error, GridSpec, MatrixPath, MixtureModel, Result, SymMat};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiPreset {
    /// `Ψ(s) = s z`.
    Linear,
    /// `Ψ ≡ z`.
    Constant,
    /// The symmetric Potts path.
    PsiStar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PsiConfig {
    Preset {
        preset: PsiPreset,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z: Option<SymMat>,
    },
    Knots {
        knots: Vec<(f64, SymMat)>,
    },
}

impl PsiConfig {
    pub fn build(&self, dim: usize) -> Result<MatrixPath> {
        match self {
            PsiConfig::Knots { knots } => MatrixPath::new(knots.clone()),
            PsiConfig::Preset { preset, z } => {
                let z = z.clone().unwrap_or_else(|| SymMat::identity(dim).scale(1.0 / dim as f64));
                match preset {
                    PsiPreset::Linear => MatrixPath::linear(z),
                    PsiPreset::Constant => MatrixPath::constant(z),
                    PsiPreset::PsiStar => MatrixPath::psi_star(dim),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasePreset {
    Ising,
    PottsUniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseConfig {
    Preset { preset: BasePreset },
    Atoms { atoms: Vec<Atom> },
}

impl BaseConfig {
    pub fn build(&self, dim: usize) -> Result<BaseMeasure> {
        match self {
            BaseConfig::Preset { preset: BasePreset::Ising } => Ok(BaseMeasure::ising()),
            BaseConfig::Preset { preset: BasePreset::PottsUniform } => BaseMeasure::potts_uniform(dim),
            BaseConfig::Atoms { atoms } => BaseMeasure::new(atoms.clone()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    #[serde(default)]
    pub seed: u64,
    /// Paths for the SDE and martingale checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    /// Branching factor per level for the nested estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    #[serde(default)]
    pub s: f64,
    #[serde(default = "one")]
    pub t: f64,
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub perturbations: Vec<Control>,
    /// Additive tolerance on top of `3·stderr`.
    #[serde(default = "default_sde_tol")]
    pub tol: f64,
}

fn one() -> f64 {
    1.0
}

fn default_sde_tol() -> f64 {
    5e-3
}

/// Points at which `eval-phi` reports `Φ(s, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub s: f64,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: MixtureModel,
    pub psi: PsiConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<DiscreteCdf>,
    pub base: BaseConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub mc: McConfig,
    /// Apply the `exp(−½∇ξ(z)·σσᵀ)` reweighting before solving in `eval-phi`.
    #[serde(default)]
    pub tilt: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<EvalPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde: Option<SdeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn psi(&self) -> Result<MatrixPath> {
        let p = self.psi.build(self.model.dim())?;
        if p.dim() != self.model.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim(),
                found: p.dim(),
            });
        }
        Ok(p)
    }

    pub fn base(&self) -> Result<BaseMeasure> {
        self.base.build(self.model.dim())
    }

    pub fn alpha(&self) -> Result<DiscreteCdf> {
        self.alpha
            .clone()
            .ok_or_else(|| Error::InvalidArgument("config has no alpha".into()))
    }

    /// Named configurations used in the documentation and tests.
    pub fn preset(name: &str) -> Option<Self> {
        let sk = |beta: f64| MixtureModel::sk(beta).expect("valid");
        let linear = PsiConfig::Preset {
            preset: PsiPreset::Linear,
            z: Some(SymMat::scalar(1.0)),
        };
        let ising = BaseConfig::Preset { preset: BasePreset::Ising };
        let potts = BaseConfig::Preset {
            preset: BasePreset::PottsUniform,
        };
        let base = RunConfig {
            model: sk(0.8),
            psi: linear.clone(),
            alpha: None,
            base: ising.clone(),
            grid: GridSpec::default(),
            mc: McConfig::default(),
            tilt: false,
            points: Vec::new(),
            sde: None,
            optimize: None,
        };
        let cfg = match name {
            "sk-rs" => RunConfig {
                model: sk(0.3),
                alpha: Some(DiscreteCdf::one_step(0.5).expect("valid")),
                ..base
            },
            "sk-1rsb" => RunConfig {
                alpha: Some(DiscreteCdf::new(vec![0.0, 0.3, 0.7, 1.0], vec![0.2, 0.5, 1.0, 1.0]).expect("valid")),
                points: vec![EvalPoint { s: 0.0, x: vec![0.0] }, EvalPoint { s: 0.5, x: vec![0.3] }],
                sde: Some(SdeConfig {
                    s: 0.0,
                    t: 1.0,
                    x: vec![0.3],
                    n_steps: None,
                    perturbations: vec![Control::Shift(vec![0.5]), Control::Shift(vec![-0.5]), Control::Zero],
                    tol: default_sde_tol(),
                }),
                optimize: Some(OptimizeConfig::uniform(5)),
                ..base
            },
            "potts2" => RunConfig {
                model: MixtureModel::new(2, &[(2, 1.0)]).expect("valid"),
                psi: PsiConfig::Preset {
                    preset: PsiPreset::PsiStar,
                    z: None,
                },
                alpha: Some(DiscreteCdf::new(vec![0.0, 0.5, 1.0], vec![0.4, 0.8, 1.0]).expect("valid")),
                base: potts,
                grid: GridSpec::new(Some(6.0), 0.1, 15),
                sde: Some(SdeConfig {
                    s: 0.0,
                    t: 1.0,
                    x: vec![0.2, -0.1],
                    n_steps: None,
                    perturbations: vec![Control::Shift(vec![0.3, -0.2]), Control::Zero],
                    tol: default_sde_tol(),
                }),
                optimize: Some(OptimizeConfig::uniform(2)),
                ..base
            },
            _ => return None,
        };
        Some(cfg)
    }

    pub const PRESETS: [&'static str; 3] = ["sk-rs", "sk-1rsb", "potts2"];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for name in RunConfig::PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            let text = cfg.to_json();
            let back = RunConfig::from_json(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.to_json(), text);
        }
    }

    #[test]
    fn knots_and_atoms_parse() {
        let text = r#"{
            "model": {"dim": 1, "betas": [[2, 0.5]]},
            "psi": {"knots": [[0.0, [[0.0]]], [1.0, [[1.0]]]]},
            "alpha": {"qs": [0.0, 0.5, 1.0], "ms": [0.1, 0.6, 1.0]},
            "base": {"atoms": [{"point": [-1.0], "weight": 0.5}, {"point": [1.0], "weight": 0.5}]}
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.psi().unwrap(), MatrixPath::linear(SymMat::scalar(1.0)).unwrap());
        assert_eq!(cfg.base().unwrap(), BaseMeasure::ising());
        assert_eq!(cfg.grid, GridSpec::default());
    }

    #[test]
    fn malformed_alpha_is_rejected() {
        let text = r#"{
            "model": {"dim": 1, "betas": [[2, 0.5]]},
            "psi": {"preset": "linear", "z": [[1.0]]},
            "alpha": {"qs": [0.0, 0.5, 1.0], "ms": [0.6, 0.1, 1.0]},
            "base": {"preset": "ising"}
        }"#;
        assert!(RunConfig::from_json(text).is_err());
    }
}
