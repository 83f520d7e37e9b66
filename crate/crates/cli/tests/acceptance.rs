//! Acceptance gate: one test per criterion, each printing its own
//! pass/fail line through the harness. The fixtures run the full design
//! pipeline once per bundled preset and are shared across criteria.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trigsyn::basin::{gamma_inside_box, largest_sublevel, SetPredicate, SublevelOptions};
use trigsyn::experiment::collect_data;
use trigsyn::linalg;
use trigsyn::model::{DataMatrices, FunctionLibrary, GroundTruthSystem, RegionBox};
use trigsyn::simulate::{simulate_event_triggered, SimConfig};
use trigsyn::synthesis::{
    contraction_certificate_residual, design_contractive, design_linearization, estimate_rq,
    Controller, Method, SynthesisOptions,
};
use trigsyn::trigger::{
    build_m, build_mbar, design_error_library, design_error_state, miet, TriggerOptions,
    TriggerPolicy,
};
use trigsyn_cli::config::{preset, PipelineConfig};
use trigsyn_cli::pipeline::cmd_repro;

struct PresetFix {
    cfg: PipelineConfig,
    sys: GroundTruthSystem,
    library: FunctionLibrary,
    data: DataMatrices,
    contractive: Controller,
    linearized: Controller,
    state_policy: TriggerPolicy,
    library_policy: TriggerPolicy,
}

fn build(name: &str) -> PresetFix {
    let cfg = PipelineConfig::from_json(preset(name).unwrap()).unwrap();
    let sys = cfg.system().unwrap();
    let library = cfg.library().unwrap();
    let data = collect_data(&sys, &cfg.experiment).unwrap();
    let omega = cfg.omega().unwrap();
    let opts = SynthesisOptions::default();
    let rq = cfg.manual_rq().unwrap().expect("presets carry a gradient bound");
    let contractive =
        design_contractive(&data, &omega, &rq, &cfg.synthesis.design_region, &opts).unwrap();
    let linearized = design_linearization(&data, &omega, &opts).unwrap();
    let topts = TriggerOptions::default();
    let region = cfg.trigger.constants_region.clone();
    let state_policy =
        design_error_state(&contractive, &data, &library, &region, &topts).unwrap();
    let eta = cfg.trigger.eta.unwrap();
    let library_policy =
        design_error_library(&contractive, &data, &library, &region, eta, &topts).unwrap();
    PresetFix {
        cfg,
        sys,
        library,
        data,
        contractive,
        linearized,
        state_policy,
        library_policy,
    }
}

fn poly() -> &'static PresetFix {
    static FIX: OnceLock<PresetFix> = OnceLock::new();
    FIX.get_or_init(|| build("poly"))
}

fn pendulum() -> &'static PresetFix {
    static FIX: OnceLock<PresetFix> = OnceLock::new();
    FIX.get_or_init(|| build("pendulum"))
}

fn both() -> [&'static PresetFix; 2] {
    [poly(), pendulum()]
}

/// Boundary states of `{x' s x <= level}`, at equally spaced angles.
fn boundary_states(s: &DMatrix<f64>, level: f64, count: usize) -> Vec<DVector<f64>> {
    let s_inv_sqrt = linalg::pd_inv_sqrt(s).unwrap();
    (0..count)
        .map(|k| {
            let th = std::f64::consts::TAU * (k as f64) / (count as f64);
            &s_inv_sqrt * DVector::from_vec(vec![th.cos(), th.sin()]) * level.sqrt()
        })
        .collect()
}

#[test]
fn acceptance_01_closed_loop_identities() {
    let start = Instant::now();
    for fix in both() {
        for ctrl in [&fix.contractive, &fix.linearized] {
            let bk = &fix.sys.b * &ctrl.k;
            let closed = &fix.sys.a + &bk;
            let x1g = &fix.data.x1 * &ctrl.g;
            let x1l = &fix.data.x1 * &ctrl.l;
            assert!(
                (&x1g - &closed).norm() < 1e-7,
                "closed-loop identity off by {:.3e}",
                (&x1g - &closed).norm()
            );
            assert!(
                (&x1l - &bk).norm() < 1e-7,
                "input-channel identity off by {:.3e}",
                (&x1l - &bk).norm()
            );
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0, "identity suite took too long");
}

#[test]
fn acceptance_02_synthesis_certificates() {
    for fix in both() {
        let residual = contraction_certificate_residual(&fix.contractive, &fix.data).unwrap();
        assert!(residual <= 1e-6, "contractive certificate residual {residual:.3e}");

        let lin = &fix.linearized;
        let x1g1 = &fix.data.x1 * lin.g1();
        let decay = &lin.s_metric * &x1g1 + x1g1.transpose() * &lin.s_metric + &lin.theta;
        let lin_residual = linalg::max_eig(&decay).unwrap();
        assert!(lin_residual <= 1e-6, "linearized decay residual {lin_residual:.3e}");

        for ctrl in [&fix.contractive, lin] {
            let x1g1 = &fix.data.x1 * ctrl.g1();
            let max_re = linalg::max_real_eigenvalue(&x1g1).unwrap();
            assert!(max_re < -1e-6, "linear closed-loop block not Hurwitz: {max_re:.3e}");
        }
    }
}

#[test]
fn acceptance_03_global_contractivity_grid() {
    let start = Instant::now();
    let fix = pendulum();
    let ctrl = &fix.contractive;
    let s = &ctrl.s_metric;
    let x1g = &fix.data.x1 * &ctrl.g;
    let grid = RegionBox::symmetric(2, 5.0, 100).unwrap();
    let mut checked = 0usize;
    let mut worst = f64::NEG_INFINITY;
    grid.for_each_grid_point(|x| {
        let j = &x1g * fix.library.jacobian(x);
        let m = s * &j + j.transpose() * s + s * ctrl.beta
            - DMatrix::identity(2, 2) * 1e-6;
        worst = worst.max(linalg::max_eig(&m).unwrap());
        checked += 1;
    });
    assert_eq!(checked, 10_000);
    assert!(worst <= 0.0, "contractivity violated on the grid by {worst:.3e}");
    assert!(start.elapsed().as_secs_f64() < 30.0, "contractivity grid took too long");
}

#[test]
fn acceptance_04_trigger_matrix_implication() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for fix in both() {
        let n = fix.contractive.state_dim();
        let s_dim = fix.contractive.lib_dim();

        let m = build_m(&fix.contractive, &fix.data);
        let sigma = fix.state_policy.sigma;
        for _ in 0..100_000 {
            let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)) * scale;
            let mut e = DVector::from_fn(s_dim, |_, _| rng.gen_range(-1.0..1.0));
            let norm = e.norm();
            if norm > 0.0 {
                e *= rng.gen_range(0.0..=1.0) * sigma * x.norm() / norm;
            }
            let mut nu = DVector::zeros(n + s_dim);
            nu.rows_mut(0, n).copy_from(&x);
            nu.rows_mut(n, s_dim).copy_from(&e);
            let quad = (&m * &nu).dot(&nu);
            assert!(
                quad <= 1e-9 * nu.norm_squared(),
                "state-trigger quadratic form positive: {quad:.3e}"
            );
        }

        let eta = fix.library_policy.eta.unwrap();
        let mbar = build_mbar(&fix.contractive, &fix.data, eta).unwrap();
        let sigma_bar = fix.library_policy.sigma;
        for _ in 0..100_000 {
            let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
            let z = DVector::from_fn(s_dim, |_, _| rng.gen_range(-1.0..1.0)) * scale;
            let mut e = DVector::from_fn(s_dim, |_, _| rng.gen_range(-1.0..1.0));
            let norm = e.norm();
            if norm > 0.0 {
                e *= rng.gen_range(0.0..=1.0) * sigma_bar * z.norm() / norm;
            }
            let mut nu = DVector::zeros(2 * s_dim);
            nu.rows_mut(0, s_dim).copy_from(&z);
            nu.rows_mut(s_dim, s_dim).copy_from(&e);
            let quad = (&mbar * &nu).dot(&nu);
            assert!(
                quad <= 1e-9 * nu.norm_squared(),
                "library-trigger quadratic form positive: {quad:.3e}"
            );
        }
    }
}

#[test]
fn acceptance_05_threshold_closed_form() {
    let lib = FunctionLibrary::identity(1);
    let data = DataMatrices::new(
        DMatrix::zeros(1, 2),
        DMatrix::zeros(1, 2),
        DMatrix::zeros(1, 2),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .unwrap();
    let ctrl = Controller {
        method: Method::Contractive,
        k: DMatrix::from_row_slice(1, 1, &[0.0]),
        g: DMatrix::from_row_slice(2, 1, &[-1.0, 0.0]),
        l: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        p: DMatrix::from_row_slice(1, 1, &[1.0]),
        s_metric: DMatrix::from_row_slice(1, 1, &[1.0]),
        omega: DMatrix::from_row_slice(1, 1, &[2.0]),
        theta: DMatrix::from_row_slice(1, 1, &[2.0]),
        phi: DMatrix::zeros(1, 0),
        beta: 2.0,
        rq: Some(DMatrix::zeros(1, 0)),
        region: None,
    };
    let region = RegionBox::symmetric(1, 1.0, 5).unwrap();
    let policy = design_error_state(&ctrl, &data, &lib, &region, &TriggerOptions::default())
        .unwrap();
    assert!(
        (policy.sigma - 0.5).abs() < 1e-4,
        "closed-form threshold is 0.5, got {}",
        policy.sigma
    );
}

#[test]
fn acceptance_06_certified_inter_event_bound() {
    let start = Instant::now();
    for (fix, t_final) in [(poly(), 2.0), (pendulum(), 0.3)] {
        let s = &fix.contractive.s_metric;
        let level = 0.9 * gamma_inside_box(s, &fix.cfg.trigger.constants_region).unwrap();
        let starts = boundary_states(s, level, 20);
        for policy in [&fix.state_policy, &fix.library_policy] {
            let mut min_gap = f64::INFINITY;
            for x0 in &starts {
                let sc = SimConfig::new(x0.clone(), t_final);
                let trace =
                    simulate_event_triggered(&fix.sys, &fix.contractive, policy, &sc).unwrap();
                for gap in trace.inter_event() {
                    assert!(
                        gap >= policy.tau,
                        "{}: gap {gap:.6e} below the certified bound {:.6e}",
                        policy.kind,
                        policy.tau
                    );
                    min_gap = min_gap.min(gap);
                }
            }
            let ratio = min_gap / policy.tau;
            assert!(
                (1.0..=50.0).contains(&ratio),
                "{}: observed/certified ratio {ratio:.3} outside [1, 50]",
                policy.kind
            );
        }
    }
    assert!(start.elapsed().as_secs_f64() < 120.0, "inter-event check took too long");
}

#[test]
fn acceptance_07_growth_constant_order() {
    for fix in both() {
        let c = &fix.state_policy.constants;
        assert!(c.ell >= c.omega, "ell {:.4e} below omega {:.4e}", c.ell, c.omega);
        let sigma = fix.state_policy.sigma;
        let tau_state = miet(sigma, c.ell).unwrap();
        let tau_library = miet(sigma, c.omega).unwrap();
        let ratio = tau_library / tau_state;
        assert!(ratio >= 1.0, "bound ratio {ratio:.4} below 1");
        assert!(
            (ratio - c.ell / c.omega).abs() <= 1e-12 * ratio,
            "bound ratio {ratio:.6} does not equal the constants ratio {:.6}",
            c.ell / c.omega
        );
    }
}

#[test]
fn acceptance_08_basin_ordering() {
    let fix = poly();
    let gamma_hi =
        gamma_inside_box(&fix.contractive.s_metric, &fix.cfg.boa.search_region).unwrap();
    let opts = SublevelOptions::new(gamma_hi);
    let continuous =
        SetPredicate::continuous_decrease(&fix.contractive, &fix.data, &fix.library).unwrap();
    let gamma_z = largest_sublevel(&fix.contractive.s_metric, &continuous, &opts).unwrap().gamma;
    let eta = fix.library_policy.eta.unwrap();
    let damped =
        SetPredicate::library_trigger_decrease(&fix.contractive, &fix.library, eta).unwrap();
    let gamma_v = largest_sublevel(&fix.contractive.s_metric, &damped, &opts).unwrap().gamma;
    let ratio = gamma_v / gamma_z;
    assert!(
        ratio < 0.5,
        "library-trigger estimate not smaller: {gamma_v:.4e} vs {gamma_z:.4e} (ratio {ratio:.3})"
    );
}

#[test]
fn acceptance_09_sublevel_invariance() {
    let fix = poly();
    let s = &fix.contractive.s_metric;
    let gamma_hi = gamma_inside_box(s, &fix.cfg.boa.search_region).unwrap();
    let continuous =
        SetPredicate::continuous_decrease(&fix.contractive, &fix.data, &fix.library).unwrap();
    let gamma = largest_sublevel(s, &continuous, &SublevelOptions::new(gamma_hi)).unwrap().gamma;
    let cap = gamma * (1.0 + 1e-6);
    for x0 in boundary_states(s, gamma, 20) {
        let sc = SimConfig::new(x0, 20.0);
        let trace =
            simulate_event_triggered(&fix.sys, &fix.contractive, &fix.state_policy, &sc).unwrap();
        let v_max = trace.lyapunov.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(v_max <= cap, "left the sublevel set: V reached {v_max:.6e} > {cap:.6e}");
        let final_norm = trace.final_state().norm();
        assert!(final_norm < 1e-2, "did not converge: final norm {final_norm:.3e}");
    }
}

#[test]
fn acceptance_10_gradient_bound_domination() {
    let fix = poly();
    let box_quarter = RegionBox::symmetric(2, 0.25, 41).unwrap();
    let rq = estimate_rq(&fix.library, &box_quarter).unwrap();
    let bound = &rq * rq.transpose();
    let published = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2872, 0.0931]));
    box_quarter.for_each_grid_point(|x| {
        let jq = fix.library.q_jacobian(x);
        let w = jq.transpose() * &jq;
        let auto_excess = linalg::max_eig(&(&w - &bound)).unwrap();
        assert!(auto_excess <= 1e-10, "estimated bound fails at a grid point by {auto_excess:.3e}");
        let published_excess = linalg::max_eig(&(&w - &published)).unwrap();
        assert!(
            published_excess <= 1e-10,
            "published bound fails at a grid point by {published_excess:.3e}"
        );
    });

    let pend = pendulum();
    let pend_box = RegionBox::symmetric(2, 5.0, 41).unwrap();
    let rq = estimate_rq(&pend.library, &pend_box).unwrap();
    let bound = &rq * rq.transpose();
    let published = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
    let gap = linalg::min_eig(&(&bound - &published)).unwrap();
    assert!(gap >= -1e-12, "estimated bound does not dominate the published one: {gap:.3e}");
    pend_box.for_each_grid_point(|x| {
        let jq = pend.library.q_jacobian(x);
        let w = jq.transpose() * &jq;
        let excess = linalg::max_eig(&(&w - &bound)).unwrap();
        assert!(excess <= 1e-10, "estimated bound fails at a grid point by {excess:.3e}");
    });
}

fn tree_bytes(root: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn acceptance_11_repro_determinism() {
    for name in ["poly", "pendulum"] {
        let cfg = PipelineConfig::from_json(preset(name).unwrap()).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        cmd_repro(&cfg, dir_a.path()).unwrap();
        cmd_repro(&cfg, dir_b.path()).unwrap();
        let tree_a = tree_bytes(dir_a.path());
        let tree_b = tree_bytes(dir_b.path());
        let names_a: Vec<&String> = tree_a.keys().collect();
        let names_b: Vec<&String> = tree_b.keys().collect();
        assert_eq!(names_a, names_b, "{name}: artifact sets differ");
        for (file, bytes) in &tree_a {
            assert_eq!(bytes, &tree_b[file], "{name}: {file} differs between runs");
        }
    }
}
