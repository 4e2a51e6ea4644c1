//! Named pipelines producing plot-ready data for each dispersion diagram and field plot.

use std::path::Path;

use clap::ValueEnum;
use serde_json::json;
use tmdiff_core::effective::{prepare, prepare_bilayer, EffectivePde};
use tmdiff_core::fdsolver::{GaussianIc, SimConfig};
use tmdiff_core::laminate::{BilayerSpec, LaminateSpec};
use tmdiff_core::validate::{both_modulated_bilayer, reference_conductivity_bilayer, reference_density_bilayer};

use crate::commands::{audit_run, compare_csv, diagnostics_csv, effective_csv, exact_branches, exact_csv, run_sim, snapshots_csv, Sweep};
use crate::config::Loaded;
use crate::output::{numerics, Code, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureId {
    /// Both parameters modulated: exact lowest branch and orders 0, 1, 2.
    DdBoth,
    /// Conductivity-only bilayer: exact lowest branch and orders 0, 2.
    DdSigmaOnly,
    /// Density-only bilayer: exact lowest branch and orders 0, 2.
    DdModel2,
    /// Leading-order field of a Gaussian pulse in the both-modulated bilayer.
    FieldLeading,
    /// Second-order field of wide and narrow pulses in the conductivity-only bilayer.
    FieldOrder2,
    /// Several exact branches of the conductivity-only bilayer.
    DdBranches,
}

impl FigureId {
    pub fn name(self) -> &'static str {
        match self {
            FigureId::DdBoth => "dd-both",
            FigureId::DdSigmaOnly => "dd-sigma-only",
            FigureId::DdModel2 => "dd-model2",
            FigureId::FieldLeading => "field-leading",
            FigureId::FieldOrder2 => "field-order2",
            FigureId::DdBranches => "dd-branches",
        }
    }

    fn default_bilayer(self) -> BilayerSpec {
        match self {
            FigureId::DdBoth | FigureId::FieldLeading => both_modulated_bilayer(),
            FigureId::DdModel2 => reference_density_bilayer(),
            FigureId::DdSigmaOnly | FigureId::FieldOrder2 | FigureId::DdBranches => reference_conductivity_bilayer(),
        }
    }
}

pub fn figure(id: FigureId, cfg: Option<&Loaded>, sweep: &Sweep, tol: Option<f64>, out: &Path) -> anyhow::Result<i32> {
    let name = id.name();
    let mut run = Run::new(out, format!("figures {name}"), cfg)?;
    let loaded = match cfg {
        Some(c) => c.clone(),
        None => Loaded::from_bilayer(id.default_bilayer())?,
    };
    let mut failed = 0;
    match id {
        FigureId::DdBoth | FigureId::DdSigmaOnly | FigureId::DdModel2 => {
            let b = loaded.require_bilayer()?;
            let orders: &[u8] = if id == FigureId::DdBoth { &[0, 1, 2] } else { &[0, 2] };
            let single = Sweep { branches: 1, ..*sweep };
            let pairs = exact_branches(&b, &single, &mut run)?;
            let prep = prepare_bilayer(&b).map_err(numerics)?;
            run.csv(exact_csv(&format!("{name}_exact.csv"), &pairs))?;
            run.csv(effective_csv(&format!("{name}_effective.csv"), &prep, orders, &single.grid(b.h)?, b.v_m)?)?;
            let (csv, worst) = compare_csv(&format!("{name}_compare.csv"), &prep, orders, &pairs[0])?;
            run.csv(csv)?;
            run.parameters(json!({ "bilayer": b, "kappa_points": sweep.points, "orders": orders, "max_rel_error": worst }));
            println!("{name}: exact lowest branch, orders {orders:?}, max relative errors {worst:?}");
        }
        FigureId::DdBranches => {
            let b = loaded.require_bilayer()?;
            let many = Sweep { branches: sweep.branches.max(3), ..*sweep };
            let pairs = exact_branches(&b, &many, &mut run)?;
            run.csv(exact_csv(&format!("{name}_exact.csv"), &pairs))?;
            // share of the κ grid on which each branch runs against the modulation
            let against: Vec<f64> = pairs
                .iter()
                .map(|p| p.fixed.omega.iter().filter(|w| w.re < 0.0).count() as f64 / p.fixed.omega.len() as f64)
                .collect();
            let counter: Vec<usize> = pairs.iter().zip(&against).filter(|(_, &f)| f > 0.5).map(|(p, _)| p.fixed.branch_index).collect();
            run.parameters(json!({
                "bilayer": b, "kappa_points": sweep.points, "branches": many.branches,
                "fraction_re_negative": against, "counter_propagating": counter,
            }));
            println!("{name}: {} branches, counter-propagating {counter:?} (fraction of grid with Re < 0: {against:?})", pairs.len());
        }
        FigureId::FieldLeading => {
            let prep = prepare(&loaded.laminate).map_err(numerics)?;
            let pde = prep.pde(0).map_err(numerics)?;
            let u = pde.coeff_x / pde.coeff_t;
            let t_end = if u != 0.0 { 5.0 / u.abs() } else { diffusion_time(&pde, &pde, 1.0) };
            let sim = SimConfig {
                domain_length: 40.0,
                n_points: 512,
                dt: t_end / 2000.0,
                t_end,
                snapshot_times: vec![0.0, 0.25 * t_end, 0.5 * t_end, t_end],
                ic: GaussianIc { x0: 10.0, nu: 1.0 },
            };
            failed += field(&mut run, name, &pde, &sim, tol)?;
            run.parameters(json!({ "laminate": summary(&loaded.laminate), "pde": pde.coeffs(), "simulation": sim }));
        }
        FigureId::FieldOrder2 => {
            let prep = prepare(&loaded.laminate).map_err(numerics)?;
            let pde = prep.pde(2).map_err(numerics)?;
            let lead = prep.pde(0).map_err(numerics)?;
            let mut sims = Vec::new();
            for (tag, nu) in [("nu1", 1.0), ("nu0.05", 0.05)] {
                let sim = pulse_config(nu, diffusion_time(&pde, &lead, nu));
                failed += field(&mut run, &format!("{name}_{tag}"), &pde, &sim, tol)?;
                sims.push(sim);
            }
            run.parameters(json!({ "laminate": summary(&loaded.laminate), "pde": pde.coeffs(), "simulations": sims }));
        }
    }
    run.finish(name)?;
    if failed > 0 {
        eprintln!("code={} {failed} solver audit(s) failed", Code::Audit.name());
        return Ok(Code::Audit.exit());
    }
    Ok(0)
}

/// `T = γ̄ν²/σ̄₀`, the diffusion time of a pulse of width ν.
fn diffusion_time(pde: &EffectivePde, lead: &EffectivePde, nu: f64) -> f64 {
    pde.coeff_t * nu * nu / -lead.coeff_xx
}

/// Pulse at `X0 = 3` in a box of at least 40 widths; snapshots at {0, 1/64, 1/32, 1/16}·T.
pub fn pulse_config(nu: f64, t: f64) -> SimConfig {
    let l = (40.0 * nu).max(8.0);
    let n = ((16.0 * l / nu) as usize).next_power_of_two();
    let t_end = t / 16.0;
    SimConfig {
        domain_length: l,
        n_points: n,
        dt: t_end / 512.0,
        t_end,
        snapshot_times: vec![0.0, t / 64.0, t / 32.0, t_end],
        ic: GaussianIc { x0: 3.0, nu },
    }
}

fn field(run: &mut Run, stem: &str, pde: &EffectivePde, sim: &SimConfig, tol: Option<f64>) -> anyhow::Result<usize> {
    let out = run_sim(pde, sim)?;
    for w in &out.warnings {
        run.warn(format!("{stem}: {w}"));
    }
    run.csv(snapshots_csv(&format!("{stem}_snapshots.csv"), sim, &out))?;
    run.csv(diagnostics_csv(&format!("{stem}_diagnostics.csv"), &out))?;
    let (audit, pass) = audit_run(pde, &out, tol.unwrap_or(0.01))?;
    run.json(&format!("{stem}_audit.json"), &audit)?;
    let skew: Vec<f64> = out.snapshots.iter().map(|s| s.diagnostics.skewness / sim.ic.nu.powi(3)).collect();
    println!("{stem}: {} steps, skewness/nu^3 at snapshots {skew:?}, audit {}", out.steps, if pass { "passed" } else { "FAILED" });
    Ok(usize::from(!pass))
}

fn summary(l: &LaminateSpec) -> serde_json::Value {
    json!({ "model": l.model, "h": l.h, "v_m": l.v_m, "harmonic_sigma": l.harmonic_sigma(), "mean_gamma": l.mean_gamma() })
}
