//! Frozen-constant checks: every value asserted here has an independent
//! closed form (eigenvalues of small matrices, logarithms of constant
//! Jacobian determinants), evaluated once in extended precision and frozen
//! as a decimal literal. The numerics must land on them, not near them.

use pseudohyp::linalg::angle;
use pseudohyp::lyapunov::{check_necessary_conditions, lyapunov_spectrum};
use pseudohyp::systems::SystemModel as GenericModel;
use pseudohyp::tangent_fields::build_fields;
use pseudohyp::{integrate, IntegratorOptions, SystemModel};

/// ln((3+√5)/2), the expansion rate of the cat map [[2,1],[1,1]].
const LOG_GOLDEN_SQ: f64 = 0.9624236501192069;

/// Contracting eigendirection of [[2,1],[1,1]]: (1, −(1+√5)/2), normalized.
const CAT_CONTRACTING: [f64; 2] = [0.5257311121191336, -0.8506508083520399];

/// Saddle eigenvalues of the origin in the (x,y) block at σ=10, b=8/3:
/// λ = (−(σ+1) ± √((σ−1)² + 4σr))/2.
const LAMBDA1_R25: f64 = 10.939282222773597; // (√1081 − 11)/2
const LAMBDA4_R25: f64 = -21.939282222773596; // −(√1081 + 11)/2
const LAMBDA1_R28: f64 = 11.827723451163456; // (√1201 − 11)/2
const LAMBDA4_R28: f64 = -22.827723451163457; // −(√1201 + 11)/2

const LN_01: f64 = -2.302585092994046; // ln 0.1
const LN_03: f64 = -1.2039728043259360; // ln 0.3
const LN_05: f64 = -0.6931471805599453; // ln 0.5
const LN_07: f64 = -0.35667494393873238; // ln 0.7

fn params(kv: &[(&str, f64)]) -> Vec<(String, f64)> {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn lorenz4d(r: f64, mu: f64) -> SystemModel {
    SystemModel::builtin(
        "lorenz4d",
        &params(&[("sigma", 10.0), ("r", r), ("b", 8.0 / 3.0), ("mu", mu)]),
    )
    .unwrap()
}

fn map_spectrum(model: &SystemModel, x0: &[f64], transient: usize, iters: usize) -> Vec<f64> {
    let opts = IntegratorOptions::default();
    lyapunov_spectrum(model, x0, transient as f64, iters as f64, 1.0, &opts)
        .unwrap()
        .exponents
}

#[test]
fn cat_map_spectrum_is_golden_log_pair() {
    let model = SystemModel::builtin("anosov_linear", &[]).unwrap();
    let exps = map_spectrum(&model, &[0.2, 0.1], 100, 4000);
    assert!((exps[0] - LOG_GOLDEN_SQ).abs() < 1e-6, "Λ₁ = {}", exps[0]);
    assert!((exps[1] + LOG_GOLDEN_SQ).abs() < 1e-6, "Λ₂ = {}", exps[1]);
}

#[test]
fn cat_map_ess_direction_lands_on_contracting_eigenvector() {
    let model = SystemModel::builtin("anosov_linear", &[]).unwrap();
    let opts = IntegratorOptions::default();
    let traj = integrate::iterate_map(&model, &[0.2, 0.1], 300, 3000, &opts).unwrap();
    // Constant Jacobian: convergence is immediate, a short trim suffices.
    let fields = build_fields(&model, &traj, 500, 500, 11, &opts).unwrap();
    for s in &fields {
        let line = angle(&s.u, &CAT_CONTRACTING).min(angle(&s.u, &[-CAT_CONTRACTING[0], -CAT_CONTRACTING[1]]));
        assert!(line < 1e-6, "ess direction off by {line}");
    }
}

#[test]
fn saddle_focus_eigenvalues_match_frozen_closed_forms() {
    for (r, l1, l4) in [(25.0, LAMBDA1_R25, LAMBDA4_R25), (28.0, LAMBDA1_R28, LAMBDA4_R28)] {
        let model = lorenz4d(r, 7.0);
        let eq = model.origin_info_closed().unwrap();
        let ev = &eq.eigenvalues;
        assert!((ev[0].re - l1).abs() < 1e-12, "λ₁(r={r}) = {}", ev[0].re);
        assert!((ev[3].re - l4).abs() < 1e-12, "λ₄(r={r}) = {}", ev[3].re);
        // Middle pair −b ± iμ.
        assert!((ev[1].re + 8.0 / 3.0).abs() < 1e-12);
        assert!((ev[1].im.abs() - 7.0).abs() < 1e-12);

        // The general-purpose numeric eigensolve must agree with the radicals.
        let num = model.equilibrium_info_numeric(&[0.0; 4]).unwrap();
        for (a, b) in eq.eigenvalues.iter().zip(num.eigenvalues.iter()) {
            assert!((a - b).norm() < 1e-10, "closed {a} vs numeric {b}");
        }
    }
}

#[test]
fn map_spectrum_sums_equal_log_abs_determinant() {
    // Benettin sums telescope to the exact volume growth, so the sum of
    // exponents hits ln|det DF| at machine precision regardless of span.
    let cases: Vec<(&str, Vec<(String, f64)>, Vec<f64>, f64)> = vec![
        (
            "henon2d",
            params(&[("M", 1.7), ("b", 0.1)]),
            vec![0.1, 0.1],
            LN_01,
        ),
        (
            "henon2d",
            params(&[("M", 1.4), ("b", -0.3)]),
            vec![0.1, 0.1],
            LN_03,
        ),
        (
            "lozi",
            params(&[("M", 1.7), ("b", 0.5)]),
            vec![0.1, 0.1],
            LN_05,
        ),
        (
            "henon3d",
            params(&[("M1", 0.044), ("M2", 0.77), ("B", 0.7)]),
            vec![0.1, 0.1, 0.1],
            LN_07,
        ),
    ];
    for (name, ps, x0, want) in cases {
        let model = SystemModel::builtin(name, &ps).unwrap();
        let exps = map_spectrum(&model, &x0, 500, 20_000);
        let sum: f64 = exps.iter().sum();
        assert!((sum - want).abs() < 1e-6, "{name}: Σ = {sum}, want {want}");
    }
}

#[test]
fn lorenz4d_necessary_conditions_hold_at_reference_parameters() {
    let model = lorenz4d(25.0, 7.0);
    let opts = IntegratorOptions::default();
    let spec = lyapunov_spectrum(&model, &[1.0, 1.0, 1.0, 1.0], 200.0, 2000.0, 0.5, &opts).unwrap();
    let e = &spec.exponents;
    // Loose band at this short span; the long-span run pins the digits.
    assert!((e[0] - 2.19).abs() < 0.3, "Λ₁ = {}", e[0]);
    assert!(e[1].abs() < 0.05, "Λ₂ = {}", e[1]);
    assert!((e[2] + 1.96).abs() < 0.3, "Λ₃ = {}", e[2]);
    assert!((e[3] + 16.56).abs() < 0.3, "Λ₄ = {}", e[3]);

    let report = check_necessary_conditions(&spec, 3, true);
    assert!(report.pass, "volume expansion + gap should pass: {report:?}");
    assert!((report.gap - 14.6).abs() < 0.5, "gap = {}", report.gap);

    // Constant divergence pins the spectrum sum.
    let sum: f64 = e.iter().sum();
    assert!((sum + 10.0 + 1.0 + 2.0 * 8.0 / 3.0).abs() < 5e-2, "Σ = {sum}");
}

#[test]
fn lorenz4d_at_mu_zero_fails_volume_expansion() {
    // The w-plane is invariant at μ=0 and contributes a decoupled −b exponent,
    // dragging Λ₁+Λ₂+Λ₃ negative.
    let model = lorenz4d(28.0, 0.0);
    let opts = IntegratorOptions::default();
    let spec = lyapunov_spectrum(&model, &[1.0, 1.0, 1.0, 0.5], 200.0, 2000.0, 0.5, &opts).unwrap();
    let e = &spec.exponents;
    assert!((e[2] + 8.0 / 3.0).abs() < 0.05, "Λ₃ = {}", e[2]);
    let sum3: f64 = e.iter().take(3).sum();
    assert!((sum3 + 1.761).abs() < 0.15, "Λ₁+Λ₂+Λ₃ = {sum3}");
    let report = check_necessary_conditions(&spec, 3, true);
    assert!(!report.pass, "μ=0 must fail: {report:?}");
}

#[test]
fn f32_build_reproduces_cat_map_spectrum_coarsely() {
    // The scalar-generic core must run end to end at reduced precision.
    let model = GenericModel::<f32>::builtin("anosov_linear", &[]).unwrap();
    let opts = pseudohyp::integrate::IntegratorOptions::<f32>::default();
    let spec = lyapunov_spectrum(&model, &[0.2f32, 0.1], 50.0, 800.0, 1.0, &opts).unwrap();
    assert!((spec.exponents[0] - LOG_GOLDEN_SQ as f32).abs() < 1e-3);
    assert!((spec.exponents[1] + LOG_GOLDEN_SQ as f32).abs() < 1e-3);
}
