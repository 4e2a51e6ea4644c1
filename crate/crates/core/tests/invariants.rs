use num_complex::Complex64 as C64;
use proptest::prelude::*;
use tmdiff_core::bloch::{DispersionBranch, Frame};
use tmdiff_core::cell::{homogenize_model1, homogenize_model2, model1_identities, model2_identities, nonreciprocity_model1};
use tmdiff_core::cellfn::UnitCellFunction as Ucf;
use tmdiff_core::effective::{prepare_bilayer, prepare_scaled, EffectivePde, PdeVariant};
use tmdiff_core::fdsolver::{run, GaussianIc, SimConfig};
use tmdiff_core::laminate::{make_bilayer, BilayerSpec, ScaleSet};
use tmdiff_core::validate::{OracleReport, IDENTITY_TOL};

/// Random piecewise-constant cell: `(breaks, sigma values, gamma values)`.
fn cell() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.05f64..1.0, 0.1f64..10.0, 0.1f64..10.0), 2..=6).prop_map(|pieces| {
        let total: f64 = pieces.iter().map(|p| p.0).sum();
        let mut breaks = vec![0.0];
        let mut acc = 0.0;
        for p in &pieces[..pieces.len() - 1] {
            acc += p.0 / total;
            breaks.push(acc);
        }
        breaks.push(1.0);
        (breaks, pieces.iter().map(|p| p.1).collect(), pieces.iter().map(|p| p.2).collect())
    })
}

fn ucf(breaks: &[f64], values: &[f64]) -> Ucf {
    Ucf::piecewise_constant(breaks.to_vec(), values).unwrap()
}

fn close(a: C64, b: C64, tol: f64) -> bool {
    (a - b).norm() <= tol * a.norm().max(b.norm()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn capacity_cell_identities_hold((breaks, s, g) in cell(), v in 1e-3f64..1.0) {
        let sigma = ucf(&breaks, &s);
        let gamma = ucf(&breaks, &g);
        let res = homogenize_model1(&sigma, &gamma, v).unwrap();
        for c in model1_identities(&sigma, &gamma, v, &res).unwrap() {
            let r = OracleReport::from_identity(&c, IDENTITY_TOL, "proptest");
            prop_assert!(r.pass, "{}: {} vs {}", c.name, c.lhs, c.rhs);
        }
    }

    #[test]
    fn single_parameter_nonreciprocity_is_positive((breaks, s, _g) in cell(), v in 1e-3f64..1.0, unit_gamma in any::<bool>()) {
        let modulated = ucf(&breaks, &s);
        let (sigma, gamma) = if unit_gamma { (modulated, Ucf::constant(1.0)) } else { (Ucf::constant(1.0), modulated) };
        let res = homogenize_model1(&sigma, &gamma, v).unwrap();
        let nr = nonreciprocity_model1(&sigma, &gamma, v, &res).unwrap();
        prop_assert!((nr.assembled - nr.closed_form).abs() <= IDENTITY_TOL * nr.closed_form.abs().max(1e-12));
        prop_assert!(nr.assembled > 0.0);
    }

    #[test]
    fn density_cell_identities_hold((breaks, s, r) in cell(), v in 1e-3f64..1.0) {
        let sigma = ucf(&breaks, &s);
        let rho = ucf(&breaks, &r);
        let res = homogenize_model2(&sigma, &rho, 1.0, v).unwrap();
        for c in model2_identities(&sigma, &rho, 1.0, v, &res).unwrap() {
            let rep = OracleReport::from_identity(&c, IDENTITY_TOL, "proptest");
            prop_assert!(rep.pass, "{}: {} vs {}", c.name, c.lhs, c.rhs);
        }
        prop_assert!(res.n_adv >= -1e-12);
    }

    #[test]
    fn constant_coefficient_dispersion_has_real_symmetry(
        ct in 0.1f64..10.0, cx in -5.0f64..5.0, cxx in -5.0f64..-0.01, cxxx in -2.0f64..2.0, ctxx in -2.0f64..0.0, k in 0.01f64..20.0,
    ) {
        let pde = EffectivePde::new([ct, cx, cxx, cxxx, ctxx], PdeVariant::SigmaOnlyOrder2);
        let w = pde.omega(k);
        let wn = pde.omega(-k);
        prop_assert!(close(wn, -w.conj(), 1e-14));
        prop_assert!(close(pde.mirrored().omega(k), wn, 1e-14));
        prop_assert!(w.im > 0.0);
    }

    #[test]
    fn effective_law_has_real_symmetry(
        sa in 5.0f64..200.0, sb in 5.0f64..200.0, ga in 1e5f64..3e6, gb in 1e5f64..3e6,
        phi in 0.1f64..0.9, k in 0.1f64..10.0, order in 0u8..=2,
    ) {
        let b = BilayerSpec::model1((sa, sb), (ga, gb), phi, 0.02, 5e-3);
        let d = prepare_bilayer(&b).unwrap().dispersion(order).unwrap();
        prop_assert!(close(d.omega(-k), -d.omega(k).conj(), 1e-10));
    }

    #[test]
    fn effective_law_is_scale_invariant(
        sa in 5.0f64..200.0, sb in 5.0f64..200.0, ga in 1e5f64..3e6, gb in 1e5f64..3e6,
        phi in 0.1f64..0.9, k in 0.1f64..10.0, factor in 0.1f64..10.0,
    ) {
        let b = BilayerSpec::model1((sa, sb), (ga, gb), phi, 0.02, 5e-3);
        let spec = make_bilayer(&b).unwrap();
        let natural = ScaleSet::natural(&spec);
        let base = prepare_scaled(&spec, natural).unwrap().dispersion(2).unwrap().omega(k);
        let other = prepare_scaled(&spec, natural.with_kappa_star(natural.kappa_star * factor)).unwrap().dispersion(2).unwrap().omega(k);
        prop_assert!(close(base, other, 1e-8), "{base} vs {other}");
    }

    #[test]
    fn frame_conversion_round_trips(ws in prop::collection::vec((-10.0f64..10.0, 0.0f64..10.0), 1..8), v in -1.0f64..1.0) {
        let kappa: Vec<f64> = (1..=ws.len()).map(|i| i as f64 * 0.7).collect();
        let omega: Vec<C64> = ws.iter().map(|&(a, b)| C64::new(a, b)).collect();
        let n = omega.len();
        let br = DispersionBranch {
            kappa: kappa.clone(), omega: omega.clone(), frame: Frame::Moving, branch_index: 0,
            residuals: vec![0.0; n], converged: vec![true; n], warnings: vec![],
        };
        let fixed = br.to_frame(Frame::Fixed, v);
        for ((k, w), f) in kappa.iter().zip(&omega).zip(&fixed.omega) {
            prop_assert!(close(*f, w + v * k, 1e-14));
        }
        let back = fixed.to_frame(Frame::Moving, v);
        for (a, b) in back.omega.iter().zip(&omega) {
            prop_assert!((a - b).norm() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solver_conserves_mass_and_dissipates(
        cx in -2.0f64..2.0, cxx in -1.0f64..-0.01, cxxx in -0.5f64..0.5, ctxx in -0.5f64..0.0, x0 in 0.0f64..20.0,
    ) {
        let pde = EffectivePde::new([1.0, cx, cxx, cxxx, ctxx], PdeVariant::SigmaOnlyOrder2);
        let cfg = SimConfig { domain_length: 20.0, n_points: 128, dt: 0.01, t_end: 1.0, snapshot_times: vec![], ic: GaussianIc { x0, nu: 1.0 } };
        let out = run(&pde, &cfg).unwrap();
        let m0 = out.history[0].diagnostics.mass;
        let e0 = out.history[0].diagnostics.energy;
        for w in out.history.windows(2) {
            prop_assert!((w[1].diagnostics.mass - m0).abs() <= 1e-10 * m0);
            prop_assert!(w[1].diagnostics.energy <= w[0].diagnostics.energy + 1e-13 * e0);
        }
    }
}
