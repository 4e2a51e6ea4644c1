use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde_json::json;
use tmdiff_core::bloch::{find_branch, find_branches, kappa_grid, BlochMedium, BranchPair, RootOptions, RESIDUAL_TOL};
use tmdiff_core::cell::{model1_identities, model2_identities, Correctors};
use tmdiff_core::effective::{default_guess, prepare, EffectivePde, Prepared};
use tmdiff_core::fdsolver::{energy_audit, run, RunOutput, SimConfig};
use tmdiff_core::laminate::BilayerSpec;
use tmdiff_core::validate::{audit_matrix, summary_line, OracleReport, IDENTITY_TOL};

use crate::config::Loaded;
use crate::output::{coded, num, numerics, Code, Csv, Run};

/// Shared κ-grid and root-finder settings.
#[derive(Debug, Clone, Copy)]
pub struct Sweep {
    pub kappa_max: Option<f64>,
    pub points: usize,
    pub branches: usize,
    pub residual_tol: f64,
}

impl Sweep {
    pub fn grid(&self, h: f64) -> anyhow::Result<Vec<f64>> {
        let kmax = self.kappa_max.unwrap_or(PI / h);
        if !(kmax > 0.0 && kmax.is_finite()) || self.points == 0 {
            return Err(coded(Code::Usage, "--kappa-max must be positive and --kappa-points at least 1"));
        }
        Ok(kappa_grid(kmax, self.points))
    }

    pub fn options(&self) -> RootOptions {
        RootOptions { residual_tol: self.residual_tol, ..RootOptions::default() }
    }
}

pub const DISPERSION_HEADER: [&str; 6] = ["branch", "kappa", "re_omega", "im_omega", "residual", "frame"];

/// Lowest branch by continuation from the order-2 law, or the `n` slowest-decaying branches.
pub fn exact_branches(b: &BilayerSpec, sweep: &Sweep, run: &mut Run) -> anyhow::Result<Vec<BranchPair>> {
    let m = BlochMedium::from_bilayer(b).map_err(numerics)?;
    let grid = sweep.grid(b.h)?;
    let opts = sweep.options();
    let pairs = if sweep.branches <= 1 {
        let guess = default_guess(b).map_err(numerics)?;
        vec![find_branch(&m, &grid, &guess, &opts).map_err(numerics)?]
    } else {
        let set = find_branches(&m, &grid, sweep.branches, None, &opts).map_err(numerics)?;
        for (k, found) in &set.partial {
            run.warn(format!("only {found} of {} roots located at kappa = {k}", sweep.branches));
        }
        set.branches
    };
    for p in &pairs {
        for w in &p.fixed.warnings {
            run.warn(format!("branch {}: {w}", p.fixed.branch_index));
        }
        if !p.fixed.all_converged() {
            run.warn(format!("branch {}: some roots did not converge", p.fixed.branch_index));
        }
    }
    Ok(pairs)
}

pub fn exact_csv(name: &str, pairs: &[BranchPair]) -> Csv {
    let mut csv = Csv::new(name, &DISPERSION_HEADER);
    for p in pairs {
        for br in [&p.fixed, &p.moving] {
            let frame = if br.frame == tmdiff_core::bloch::Frame::Fixed { "fixed" } else { "moving" };
            for i in 0..br.kappa.len() {
                csv.row(&[
                    br.branch_index.to_string(),
                    num(br.kappa[i]),
                    num(br.omega[i].re),
                    num(br.omega[i].im),
                    num(br.residuals[i]),
                    frame.to_string(),
                ]);
            }
        }
    }
    csv
}

/// Effective laws of the given orders in both frames; `residual` is empty (closed form).
pub fn effective_csv(name: &str, prep: &Prepared, orders: &[u8], grid: &[f64], v_m: f64) -> anyhow::Result<Csv> {
    let mut header = DISPERSION_HEADER.to_vec();
    header.push("order");
    let mut csv = Csv::new(name, &header);
    for &o in orders {
        let d = prep.dispersion(o).map_err(numerics)?;
        let w = d.omegas(grid);
        for (frame, shift) in [("fixed", 0.0), ("moving", -v_m)] {
            for (&k, w) in grid.iter().zip(&w) {
                let w = w + shift * k;
                csv.row(&[
                    "0".into(),
                    num(k),
                    num(w.re),
                    num(w.im),
                    String::new(),
                    frame.into(),
                    o.to_string(),
                ]);
            }
        }
    }
    Ok(csv)
}

fn orders(order: Option<u8>) -> Vec<u8> {
    order.map(|o| vec![o]).unwrap_or_else(|| vec![0, 1, 2])
}

pub fn homogenize(cfg: &Loaded, samples: usize, out: &Path) -> anyhow::Result<i32> {
    let mut run = Run::new(out, "homogenize", Some(cfg))?;
    let prep = prepare(&cfg.laminate).map_err(numerics)?;
    let p = &prep.problem;
    let hom = &prep.homogenization;
    let checks = match (&hom.model1, &hom.model2) {
        (Some(r), _) => model1_identities(&p.sigma, &p.gamma, p.v, r),
        (_, Some(r)) => match (&p.rho, p.c) {
            (Some(rho), Some(c)) => model2_identities(&p.sigma, rho, c, p.v, r),
            _ => return Err(coded(Code::ConfigSchema, "density laminate without density profile")),
        },
        _ => return Err(coded(Code::Numerics, "homogenization produced no cell result")),
    }
    .map_err(numerics)?;
    let identities: Vec<OracleReport> =
        checks.iter().map(|c| OracleReport::from_identity(c, IDENTITY_TOL, "corrector identity")).collect();
    let lead = prep.pde(0).map_err(numerics)?;
    let second = prep.pde(2).ok();

    let mut csv = Csv::new("correctors.csv", &corrector_header(&hom.correctors));
    let n = samples.max(2);
    for k in 0..=n {
        let y = k as f64 / n as f64;
        let mut row = vec![num(y)];
        row.extend(corrector_values(&hom.correctors, y.min(1.0 - 1e-15)).into_iter().map(num));
        csv.row(&row);
    }
    run.csv(csv)?;

    let doc = json!({
        "model": p.model,
        "h": p.h,
        "v_m": cfg.laminate.v_m,
        "eta": p.eta,
        "scales": p.scales,
        "coefficients": hom.coefficients,
        "dimensional": {
            "gamma0": lead.coeff_t,
            "sigma0": -lead.coeff_xx,
            "v_m_W0": -lead.coeff_x,
            "order0_pde": lead.coeffs(),
            "order2_pde": second.as_ref().map(|s| s.coeffs()),
        },
        "nonreciprocity": hom.nonreciprocity,
        "identities": identities,
        "correctors_csv": "correctors.csv",
    });
    run.json("homogenize.json", &doc)?;
    run.tolerance("identity_rel", IDENTITY_TOL);
    run.parameters(json!({ "samples": n }));
    let failed = identities.iter().filter(|r| !r.pass).count();
    println!(
        "sigma0={} gamma0={} v_m_W0={} identities: {}/{} passed",
        -lead.coeff_xx,
        lead.coeff_t,
        -lead.coeff_x,
        identities.len() - failed,
        identities.len()
    );
    run.finish("homogenize")?;
    audit_exit(failed, "corrector identities")
}

fn audit_exit(failed: usize, what: &str) -> anyhow::Result<i32> {
    if failed > 0 {
        eprintln!("code={} {failed} {what} failed", Code::Audit.name());
        Ok(Code::Audit.exit())
    } else {
        Ok(0)
    }
}

fn corrector_header(c: &Correctors) -> Vec<&'static str> {
    match c {
        Correctors::Model1(_) => vec!["y", "P", "Q", "R", "S", "V", "A", "L", "M", "N", "O", "B", "C"],
        Correctors::Model2(_) => vec!["y", "P", "S", "A", "M", "C", "R_adv", "L_adv", "N_adv", "B_adv"],
    }
}

fn corrector_values(c: &Correctors, y: f64) -> Vec<f64> {
    match c {
        Correctors::Model1(k) => [&k.p, &k.q, &k.r, &k.s, &k.v, &k.a, &k.l, &k.m_corr, &k.n, &k.o, &k.b, &k.c]
            .iter()
            .map(|c| c.value.eval(y))
            .collect(),
        Correctors::Model2(k) => [&k.p, &k.s, &k.a, &k.m_corr, &k.c, &k.r_adv, &k.l_adv, &k.n_adv_corr, &k.b_adv]
            .iter()
            .map(|c| c.value.eval(y))
            .collect(),
    }
}

pub fn dispersion_exact(cfg: &Loaded, sweep: &Sweep, out: &Path) -> anyhow::Result<i32> {
    let b = cfg.require_bilayer()?;
    let mut run = Run::new(out, "dispersion exact", Some(cfg))?;
    let pairs = exact_branches(&b, sweep, &mut run)?;
    run.csv(exact_csv("dispersion_exact.csv", &pairs))?;
    run.tolerance("residual", sweep.residual_tol);
    run.parameters(json!({ "kappa_max": sweep.grid(b.h)?.last(), "kappa_points": sweep.points, "branches": sweep.branches }));
    let worst = pairs.iter().map(|p| p.fixed.max_residual()).fold(0.0, f64::max);
    println!("{} branch(es), {} kappa points, max residual {:e}", pairs.len(), sweep.points, worst);
    run.finish("dispersion_exact")?;
    Ok(0)
}

pub fn dispersion_effective(cfg: &Loaded, sweep: &Sweep, order: Option<u8>, out: &Path) -> anyhow::Result<i32> {
    let mut run = Run::new(out, "dispersion effective", Some(cfg))?;
    let prep = prepare(&cfg.laminate).map_err(numerics)?;
    let grid = sweep.grid(cfg.laminate.h)?;
    let os = orders(order);
    run.csv(effective_csv("dispersion_effective.csv", &prep, &os, &grid, cfg.laminate.v_m)?)?;
    run.parameters(json!({ "kappa_max": grid.last(), "kappa_points": sweep.points, "orders": os }));
    println!("orders {os:?}, {} kappa points", grid.len());
    run.finish("dispersion_effective")?;
    Ok(0)
}

/// Exact lowest branch against the effective laws, per κ.
pub fn compare_csv(name: &str, prep: &Prepared, orders: &[u8], exact: &BranchPair) -> anyhow::Result<(Csv, Vec<f64>)> {
    let header = ["kappa", "order", "re_exact", "im_exact", "re_effective", "im_effective", "rel_error"];
    let mut csv = Csv::new(name, &header);
    let mut worst = Vec::new();
    for &o in orders {
        let d = prep.dispersion(o).map_err(numerics)?;
        let mut w_max: f64 = 0.0;
        for (&k, &e) in exact.fixed.kappa.iter().zip(&exact.fixed.omega) {
            let w: C64 = d.omega(k);
            let rel = (w - e).norm() / e.norm();
            w_max = w_max.max(rel);
            csv.row(&[num(k), o.to_string(), num(e.re), num(e.im), num(w.re), num(w.im), num(rel)]);
        }
        worst.push(w_max);
    }
    Ok((csv, worst))
}

pub fn dispersion_compare(cfg: &Loaded, sweep: &Sweep, order: Option<u8>, out: &Path) -> anyhow::Result<i32> {
    let b = cfg.require_bilayer()?;
    let mut run = Run::new(out, "dispersion compare", Some(cfg))?;
    let single = Sweep { branches: 1, ..*sweep };
    let pairs = exact_branches(&b, &single, &mut run)?;
    let prep = prepare(&cfg.laminate).map_err(numerics)?;
    let os = orders(order);
    let (csv, worst) = compare_csv("dispersion_compare.csv", &prep, &os, &pairs[0])?;
    run.csv(csv)?;
    run.tolerance("residual", sweep.residual_tol);
    run.parameters(json!({ "kappa_points": sweep.points, "orders": os, "max_rel_error": worst }));
    for (o, w) in os.iter().zip(&worst) {
        println!("order {o}: max relative error {w:e}");
    }
    run.finish("dispersion_compare")?;
    Ok(0)
}

pub fn snapshots_csv(name: &str, sim: &SimConfig, out: &RunOutput) -> Csv {
    let mut csv = Csv::new(name, &["time", "x", "theta"]);
    let x = sim.grid();
    for s in &out.snapshots {
        for (xi, v) in x.iter().zip(&s.values) {
            csv.row(&[num(s.time), num(*xi), num(*v)]);
        }
    }
    csv
}

pub fn diagnostics_csv(name: &str, out: &RunOutput) -> Csv {
    let mut csv = Csv::new(name, &["time", "mass", "energy", "centroid", "skewness"]);
    for r in &out.history {
        let d = r.diagnostics;
        csv.row(&[num(r.time), num(d.mass), num(d.energy), num(d.centroid), num(d.skewness)]);
    }
    csv
}

/// Energy-decay audit plus mass drift; returns the JSON report and whether both pass.
pub fn audit_run(pde: &EffectivePde, out: &RunOutput, tol: f64) -> anyhow::Result<(serde_json::Value, bool)> {
    let audit = energy_audit(pde, &out.history, tol).map_err(numerics)?;
    let m0 = out.history[0].diagnostics.mass;
    let drift = out.history.iter().map(|r| (r.diagnostics.mass - m0).abs()).fold(0.0, f64::max) / m0.abs().max(f64::MIN_POSITIVE);
    let mass_ok = drift <= 1e-10;
    let doc = json!({
        "energy": audit,
        "mass": { "max_rel_drift": drift, "tolerance": 1e-10, "pass": mass_ok },
        "steps": out.steps,
        "warnings": out.warnings,
        "pass": audit.pass && mass_ok,
    });
    Ok((doc, audit.pass && mass_ok))
}

pub fn simulate(cfg: &Loaded, order: Option<u8>, tol: Option<f64>, out: &Path) -> anyhow::Result<i32> {
    let mut sim = cfg.simulation.clone().ok_or_else(|| coded(Code::ConfigSchema, "`simulate` needs a `simulation` block in the config"))?;
    if sim.snapshot_times.is_empty() {
        sim.snapshot_times = vec![0.0, sim.t_end];
    }
    let order = order.unwrap_or(2);
    let tol = tol.unwrap_or(0.01);
    let mut run = Run::new(out, "simulate", Some(cfg))?;
    let prep = prepare(&cfg.laminate).map_err(numerics)?;
    let pde = prep.pde(order).map_err(numerics)?;
    let result = run_sim(&pde, &sim)?;
    for w in &result.warnings {
        run.warn(w.clone());
    }
    run.csv(snapshots_csv("snapshots.csv", &sim, &result))?;
    run.csv(diagnostics_csv("diagnostics.csv", &result))?;
    let (audit, pass) = audit_run(&pde, &result, tol)?;
    run.json("audit.json", &audit)?;
    run.tolerance("energy_rate_rel", tol);
    run.tolerance("mass_rel", 1e-10);
    run.parameters(json!({ "order": order, "pde": pde.coeffs(), "variant": pde.variant, "simulation": sim }));
    println!("{} steps, {} snapshots, audit {}", result.steps, result.snapshots.len(), if pass { "passed" } else { "FAILED" });
    run.finish("simulate")?;
    audit_exit(usize::from(!pass), "solver audit")
}

pub fn run_sim(pde: &EffectivePde, sim: &SimConfig) -> anyhow::Result<RunOutput> {
    run(pde, sim).map_err(|e| match e {
        tmdiff_core::fdsolver::FdError::Config { .. } => coded(Code::ConfigSchema, e.to_string()),
        other => numerics(other),
    })
}

pub fn validate(seed: u64, out: &Path) -> anyhow::Result<i32> {
    let mut run = Run::new(out, "validate", None)?;
    let reports = audit_matrix(seed);
    run.json("validate.json", &reports)?;
    run.tolerance("identity_rel", IDENTITY_TOL);
    run.tolerance("residual", RESIDUAL_TOL);
    run.parameters(json!({ "seed": seed }));
    for r in reports.iter().filter(|r| !r.pass) {
        eprintln!("failed: {} (lhs {:e}, rhs {:e}, rel {:e})", r.name, r.lhs, r.rhs, r.rel_error);
    }
    println!("{}", summary_line(&reports));
    run.finish("validate")?;
    audit_exit(reports.iter().filter(|r| !r.pass).count(), "oracle checks")
}
