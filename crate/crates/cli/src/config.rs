use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use tmdiff_core::cellfn::UnitCellFunction;
use tmdiff_core::fdsolver::SimConfig;
use tmdiff_core::laminate::{make_bilayer, BilayerCapacity, BilayerSpec, LaminateSpec, MaterialProfile, Model};

use crate::output::{coded, Code};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilayerConfig {
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub gamma_a: Option<f64>,
    pub gamma_b: Option<f64>,
    pub rho_a: Option<f64>,
    pub rho_b: Option<f64>,
    pub c: Option<f64>,
    pub phi: f64,
}

/// One piece of a general laminate, starting at `breakpoint` (fraction of the cell).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilePiece {
    pub breakpoint: f64,
    pub sigma: f64,
    pub gamma: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Model,
    pub bilayer: Option<BilayerConfig>,
    pub profile: Option<Vec<ProfilePiece>>,
    /// Specific capacity for density profiles.
    pub c: Option<f64>,
    pub h: f64,
    pub v_m: f64,
    pub simulation: Option<SimConfig>,
}

/// A validated configuration together with its provenance.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub path: Option<PathBuf>,
    pub sha256: Option<String>,
    pub laminate: LaminateSpec,
    pub bilayer: Option<BilayerSpec>,
    pub simulation: Option<SimConfig>,
}

impl Loaded {
    pub fn from_bilayer(b: BilayerSpec) -> anyhow::Result<Self> {
        let laminate = make_bilayer(&b).map_err(|e| coded(Code::ConfigSchema, e.to_string()))?;
        Ok(Self { path: None, sha256: None, laminate, bilayer: Some(b), simulation: None })
    }

    pub fn require_bilayer(&self) -> anyhow::Result<BilayerSpec> {
        self.bilayer.ok_or_else(|| coded(Code::ConfigSchema, "exact dispersion needs a two-phase `bilayer` laminate"))
    }
}

pub fn load(path: &Path) -> anyhow::Result<Loaded> {
    let bytes = std::fs::read(path).map_err(|e| coded(Code::ConfigRead, format!("{}: {e}", path.display())))?;
    let sha = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect::<String>();
    let cfg: Config = serde_json::from_slice(&bytes).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => coded(Code::ConfigSchema, format!("{}: {e}", path.display())),
        _ => coded(Code::ConfigJson, format!("{}: {e}", path.display())),
    })?;
    let mut loaded = build(&cfg)?;
    loaded.path = Some(path.to_path_buf());
    loaded.sha256 = Some(sha);
    Ok(loaded)
}

fn schema(msg: impl Into<String>) -> anyhow::Error {
    coded(Code::ConfigSchema, msg)
}

pub fn build(cfg: &Config) -> anyhow::Result<Loaded> {
    let (laminate, bilayer) = match (&cfg.bilayer, &cfg.profile) {
        (Some(_), Some(_)) => return Err(schema("give either `bilayer` or `profile`, not both")),
        (None, None) => return Err(schema("missing laminate: expected `bilayer` or `profile`")),
        (Some(b), None) => {
            let capacity = match cfg.model {
                Model::Model1 => match (b.gamma_a, b.gamma_b, b.rho_a, b.rho_b) {
                    (Some(gamma_a), Some(gamma_b), None, None) => BilayerCapacity::Capacities { gamma_a, gamma_b },
                    _ => return Err(schema("model1 bilayer needs `gamma_a` and `gamma_b` (and no densities)")),
                },
                Model::Model2 => match (b.rho_a, b.rho_b, b.c.or(cfg.c), b.gamma_a, b.gamma_b) {
                    (Some(rho_a), Some(rho_b), Some(c), None, None) => BilayerCapacity::Densities { rho_a, rho_b, c },
                    _ => return Err(schema("model2 bilayer needs `rho_a`, `rho_b` and `c` (and no capacities)")),
                },
            };
            let spec = BilayerSpec { sigma_a: b.sigma_a, sigma_b: b.sigma_b, capacity, phi: b.phi, h: cfg.h, v_m: cfg.v_m };
            (make_bilayer(&spec).map_err(|e| schema(e.to_string()))?, Some(spec))
        }
        (None, Some(pieces)) => (profile_laminate(cfg, pieces)?, None),
    };
    Ok(Loaded { path: None, sha256: None, laminate, bilayer, simulation: cfg.simulation.clone() })
}

fn profile_laminate(cfg: &Config, pieces: &[ProfilePiece]) -> anyhow::Result<LaminateSpec> {
    if pieces.is_empty() || pieces[0].breakpoint != 0.0 {
        return Err(schema("`profile` must start with a piece at breakpoint 0"));
    }
    let mut breaks: Vec<f64> = pieces.iter().map(|p| p.breakpoint).collect();
    breaks.push(1.0);
    let sigma: Vec<f64> = pieces.iter().map(|p| p.sigma).collect();
    let pick = |f: fn(&ProfilePiece) -> Option<f64>, name: &str| -> anyhow::Result<Vec<f64>> {
        pieces.iter().map(|p| f(p).ok_or_else(|| schema(format!("every profile piece needs `{name}`")))).collect()
    };
    let s = UnitCellFunction::piecewise_constant(breaks.clone(), &sigma).map_err(|e| schema(e.to_string()))?;
    let profile = match cfg.model {
        Model::Model1 => {
            let g = UnitCellFunction::piecewise_constant(breaks, &pick(|p| p.gamma, "gamma")?).map_err(|e| schema(e.to_string()))?;
            MaterialProfile::capacity(s, g)
        }
        Model::Model2 => {
            let c = cfg.c.ok_or_else(|| schema("model2 profile needs a top-level `c`"))?;
            let r = UnitCellFunction::piecewise_constant(breaks, &pick(|p| p.rho, "rho")?).map_err(|e| schema(e.to_string()))?;
            MaterialProfile::density(s, r, c)
        }
    }
    .map_err(|e| schema(e.to_string()))?;
    LaminateSpec::new(profile, cfg.h, cfg.v_m, cfg.model).map_err(|e| schema(e.to_string()))
}
