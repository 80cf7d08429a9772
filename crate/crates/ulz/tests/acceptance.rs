//! Acceptance suite: one test per shipped guarantee, each printing a
//! PASS line with its measured margin (run with `--nocapture` to see
//! them). Tolerances are pinned in code next to each check.

use std::time::Instant;

use ulz::autodiff::{ParamStore, Shape, Tape};
use ulz::classical::{admm_lasso_run, fista_run, ista_run, ClassicalConfig};
use ulz::dictgen::{analytic_w, generate_problem, GenSpec};
use ulz::hybrid::unrolled::{mse_loss, record_model};
use ulz::hybrid::{
    self, certified_run_with_w, exact_sparsity_instance, low_coherence_dictionary, steps,
    AlphaSpec, CpExtras, HcistaParams, HelistaThetas, HybridConfig, Mode, Variant,
};
use ulz::linalg::{spectral_norm_sq, DenseMatrix, DenseVector};
use ulz::metrics::nmse_db;
use ulz::neuralop::{ConvStackSpec, Operator};
use ulz::problem::ProblemInstance;
use ulz::rng::{stream, SplitMix64};
use ulz::thresh::{multistage_threshold, soft_threshold, ss_threshold};
use ulz::train::{
    count_parameters, stagewise_train, validation_nmse_db, ProblemSampler, StageSpec,
    TrainConfig,
};

fn desk_instance(seed: u64) -> ProblemInstance {
    generate_problem(&GenSpec {
        m: 50,
        n: 100,
        bernoulli_p: 0.1,
        condition_number: None,
        snr_db: None,
        seed,
    })
    .unwrap()
}

fn conv_op() -> Operator {
    Operator::conv_residual(ConvStackSpec::default())
}

/// The adaptive-lambda ceiling hyper-parameter used by the untrained
/// classical-parameter runs. At this desk scale the step norms shrink far
/// sooner than at the published scale, so a unit ceiling collapses lambda
/// to zero within ~200 iterations and parks the iterate at the min-norm
/// interpolant; a looser ceiling keeps the schedule in the
/// slowly-decaying regime the published curves show.
const DESK_C_LAMBDA: f64 = 30.0;

// 1. Untrained classical-parameter descent: F non-increasing, with the
//    quantitative per-step drop, over 600 iterations and 20 seeds.
#[test]
fn acceptance_01_hcista_descent() {
    let t0 = Instant::now();
    let op = conv_op();
    let mut worst_mono = f64::NEG_INFINITY;
    let mut worst_quant = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let p = desk_instance(seed);
        let lip = spectral_norm_sq(&p.a, 1e-12, 100_000).unwrap();
        let mut draw = SplitMix64::stream(seed, stream::SOLVER);
        let cfg = HybridConfig {
            variant: Variant::Hcista,
            k: 600,
            lambda0: draw.uniform(0.05, 0.2),
            c_lambda: DESK_C_LAMBDA,
            mode: Mode::Untrained,
            seed,
            ..Default::default()
        };
        let (trace, _) = hybrid::run(&p, &cfg, &op).unwrap();
        for n in 0..600 {
            let drop = trace.objective[n] - trace.objective[n + 1];
            worst_mono = worst_mono.max(-drop);
            let step_sq = trace.iterates[n + 1].sub(&trace.iterates[n]).norm2_sq();
            worst_quant = worst_quant.max(0.25 * lip * step_sq - drop);
        }
    }
    assert!(worst_mono <= 1e-10, "objective rose by {worst_mono}");
    assert!(worst_quant <= 1e-10, "quantitative drop violated by {worst_quant}");
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 30.0, "runtime {dt:.1}s exceeds 30s");
    println!(
        "acceptance 01 hcista descent: PASS (worst monotonicity {worst_mono:.2e}, \
         worst quantitative slack {worst_quant:.2e}, {dt:.1}s)"
    );
}

// 2. Untrained classical-parameter runs end no more than 1 dB above
//    fixed-lambda ISTA at iteration 600, per instance and lambda0.
#[test]
fn acceptance_02_hcista_at_least_ista() {
    let t0 = Instant::now();
    let op = conv_op();
    let mut worst_gap = f64::NEG_INFINITY;
    for lambda0 in [0.05, 0.1, 0.2] {
        for seed in 0..20u64 {
            let p = desk_instance(seed);
            let fixed = ista_run(
                &p,
                &ClassicalConfig { lambda: lambda0, k: 600, ..Default::default() },
            )
            .unwrap();
            let cfg = HybridConfig {
                variant: Variant::Hcista,
                k: 600,
                lambda0,
                c_lambda: DESK_C_LAMBDA,
                mode: Mode::Untrained,
                seed,
                ..Default::default()
            };
            let (hy, _) = hybrid::run(&p, &cfg, &op).unwrap();
            let gap = hy.nmse_db.last().unwrap() - fixed.nmse_db.last().unwrap();
            assert!(
                gap <= 1.0,
                "lambda0 {lambda0} seed {seed}: hybrid worse by {gap:.2} dB"
            );
            worst_gap = worst_gap.max(gap);
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 60.0, "runtime {dt:.1}s exceeds 1 min");
    println!(
        "acceptance 02 hcista vs ista at 600: PASS (worst gap {worst_gap:+.2} dB <= +1 dB, {dt:.1}s)"
    );
}

struct CertifiedFixture {
    a: DenseMatrix,
    w: DenseMatrix,
    mu: f64,
}

fn certified_fixture() -> CertifiedFixture {
    let a = low_coherence_dictionary(441, 3).unwrap();
    let rep = analytic_w(&a).unwrap();
    assert!(rep.mu_hat <= 0.05, "construction gave mu_hat {}", rep.mu_hat);
    CertifiedFixture { a, w: rep.w, mu: rep.mu_hat }
}

// 3. Certified coupled-weight runs: no false positive and the linear
//    error bound |S| B_x exp(-c n), 50 seeds, 16 iterations.
#[test]
fn acceptance_03_certified_linear_rate() {
    let t0 = Instant::now();
    let fx = certified_fixture();
    let op = conv_op();
    let c = -(4.0 * fx.mu * 2.0 - 2.0 * fx.mu).ln();
    let mut min_margin = f64::INFINITY;
    for seed in 0..50u64 {
        let p = exact_sparsity_instance(&fx.a, 2, 1000 + seed).unwrap();
        let b_x = p.x_star.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cfg = HybridConfig {
            variant: Variant::HlistaCp,
            k: 16,
            mode: Mode::Certified,
            seed,
            ..Default::default()
        };
        let (_, rep) = certified_run_with_w(&p, &cfg, &op, &fx.w, fx.mu).unwrap();
        for row in &rep.rows {
            assert!(row.support_ok, "seed {seed} n {}: false positive", row.n);
            let bound = 2.0 * b_x * (-c * row.n as f64).exp();
            assert!(
                row.error_l2 <= bound,
                "seed {seed} n {}: error {} above bound {bound}",
                row.n,
                row.error_l2
            );
            assert!((row.bound - bound).abs() <= 1e-9 * bound.max(1e-300));
            min_margin = min_margin.min(bound - row.error_l2);
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "runtime {dt:.1}s exceeds 10s");
    println!(
        "acceptance 03 certified linear rate: PASS (mu_hat {:.4}, c {:.3}, 50 seeds, {dt:.1}s)",
        fx.mu, c
    );
}

// 4. Support selection dominates: c_ss^k >= c and a pointwise tighter
//    bound than the plain coupled run on the same instances.
#[test]
fn acceptance_04_cpss_dominance() {
    let t0 = Instant::now();
    let fx = certified_fixture();
    let op = conv_op();
    let c = -(4.0 * fx.mu * 2.0 - 2.0 * fx.mu).ln();
    for seed in 0..50u64 {
        let p = exact_sparsity_instance(&fx.a, 2, 1000 + seed).unwrap();
        let base = HybridConfig { k: 16, mode: Mode::Certified, seed, ..Default::default() };
        let cfg_cp = HybridConfig { variant: Variant::HlistaCp, ..base.clone() };
        let cfg_ss = HybridConfig { variant: Variant::HlistaCpss, ..base };
        let (_, rep_cp) = certified_run_with_w(&p, &cfg_cp, &op, &fx.w, fx.mu).unwrap();
        let (_, rep_ss) = certified_run_with_w(&p, &cfg_ss, &op, &fx.w, fx.mu).unwrap();
        for (rc, rs) in rep_cp.rows.iter().zip(&rep_ss.rows) {
            assert!(
                rs.rate_constant >= c - 1e-12,
                "seed {seed} n {}: c_ss {} below c {c}",
                rs.n,
                rs.rate_constant
            );
            assert!(
                rs.bound <= rc.bound * (1.0 + 1e-12),
                "seed {seed} n {}: cpss bound above cp bound",
                rs.n
            );
            assert!(rs.support_ok && rs.error_l2 <= rs.bound);
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "runtime {dt:.1}s exceeds 10s");
    println!("acceptance 04 cpss dominance: PASS (c_ss >= {c:.3} everywhere, {dt:.1}s)");
}

// 5. Analytic-weight certified runs hold for both first-stage scales.
#[test]
fn acceptance_05_halista_certified() {
    let t0 = Instant::now();
    let fx = certified_fixture();
    let op = conv_op();
    for gamma1 in [0.5, 1.0] {
        for seed in 0..50u64 {
            let p = exact_sparsity_instance(&fx.a, 2, 2000 + seed).unwrap();
            let cfg = HybridConfig {
                variant: Variant::Halista,
                k: 16,
                gamma1,
                mode: Mode::Certified,
                seed,
                ..Default::default()
            };
            let (_, rep) = certified_run_with_w(&p, &cfg, &op, &fx.w, fx.mu).unwrap();
            for row in &rep.rows {
                assert!(row.support_ok, "gamma1 {gamma1} seed {seed} n {}", row.n);
                assert!(
                    row.error_l2 <= row.bound,
                    "gamma1 {gamma1} seed {seed} n {}: {} > {}",
                    row.n,
                    row.error_l2,
                    row.bound
                );
                assert!(row.rate_positive);
            }
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "runtime {dt:.1}s exceeds 10s");
    println!("acceptance 05 halista certified: PASS (gamma1 in {{0.5, 1.0}}, 50 seeds, {dt:.1}s)");
}

fn max_abs_diff(a: &DenseVector, b: &DenseVector) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// 6. Reduction identities across the family.
#[test]
fn acceptance_06_reduction_identities() {
    let p = desk_instance(5);
    let lip = spectral_norm_sq(&p.a, 1e-12, 100_000).unwrap();
    let t = 1.0 / lip;
    let op = conv_op();
    let mut store = ParamStore::new();
    op.init_params(&mut store, 8, 99, false).unwrap();

    // (a) coupled-weight step with W = t A', theta = lambda t, alpha = 1/2
    //     reproduces the free-parameter classical step
    let mut w_ta = p.a.clone();
    w_ta.scale_in_place(t);
    let mut x_cp = DenseVector::zeros(p.n());
    let mut x_f = DenseVector::zeros(p.n());
    let mut lambda = 0.1;
    let mut worst_a = 0.0f64;
    for n in 0..8 {
        let out_f = steps::hcista_step(
            &p,
            lip,
            &x_f,
            &op,
            &store,
            n,
            HcistaParams { delta: f64::NAN, t, lambda },
            AlphaSpec::Override(0.5),
            true,
            1e-12,
        )
        .unwrap();
        let out_cp = steps::cp_step(
            &p,
            &x_cp,
            &op,
            &store,
            n,
            &w_ta,
            1.0,
            &w_ta,
            1.0,
            lambda * t,
            lambda * t,
            AlphaSpec::Override(0.5),
            &CpExtras::default(),
            1e-12,
        )
        .unwrap();
        worst_a = worst_a.max(max_abs_diff(&out_f.x_next, &out_cp.x_next));
        let step_norm = out_f.x_next.sub(&x_f).norm2();
        lambda = 0.999 * lambda.min(step_norm).max(1e-300);
        x_f = out_f.x_next;
        x_cp = out_cp.x_next;
    }
    assert!(worst_a <= 1e-12, "free-step reduction drifted by {worst_a}");

    // (b) gained variant with zero gates equals the plain coupled variant
    let cfg_cp = HybridConfig {
        variant: Variant::HlistaCp,
        k: 8,
        mode: Mode::Untrained,
        seed: 4,
        ..Default::default()
    };
    let cfg_g = HybridConfig { variant: Variant::Hglista, ..cfg_cp.clone() };
    let s_cp = hybrid::init_store(&p, &cfg_cp, &op).unwrap();
    let s_g = hybrid::init_store(&p, &cfg_g, &op).unwrap();
    let t_cp = hybrid::run_with_store(&p, &cfg_cp, &op, &s_cp).unwrap();
    let t_g = hybrid::run_with_store(&p, &cfg_g, &op, &s_g).unwrap();
    let mut worst_b = 0.0f64;
    for (a, b) in t_cp.iterates.iter().zip(&t_g.iterates) {
        worst_b = worst_b.max(max_abs_diff(a, b));
    }
    assert!(worst_b <= 1e-12, "gated reduction drifted by {worst_b}");

    // (c) zero operator and alpha -> 1 collapse each hybrid step onto its
    //     plain update form
    let zero = Operator::zero();
    let none = ParamStore::new();
    let x = {
        let mut g = SplitMix64::stream(11, stream::SOLVER);
        DenseVector::new((0..p.n()).map(|_| 0.3 * g.next_gaussian()).collect())
    };
    let resid = p.b.sub(&p.a.matvec(&x).unwrap());
    let grad = p.a.matvec_t(&p.a.matvec(&x).unwrap().sub(&p.b)).unwrap();
    let mut worst_c = 0.0f64;

    // classical-parameter form -> proximal gradient step
    let out = steps::hcista_step(
        &p,
        lip,
        &x,
        &zero,
        &none,
        0,
        HcistaParams { delta: 0.3, t, lambda: 0.1 },
        AlphaSpec::Override(1.0),
        false,
        1e-12,
    )
    .unwrap();
    let ista_ref = soft_threshold(&x.lincomb(1.0, &grad, -t), 0.1 * t).unwrap();
    worst_c = worst_c.max(max_abs_diff(&out.x_next, &ista_ref));

    // coupled-weight form -> thresholded correction step
    let rep = analytic_w(&p.a).unwrap();
    let out = steps::cp_step(
        &p,
        &x,
        &zero,
        &none,
        0,
        &rep.w,
        1.0,
        &rep.w,
        1.0,
        0.05,
        0.07,
        AlphaSpec::Override(1.0),
        &CpExtras::default(),
        1e-12,
    )
    .unwrap();
    let cp_ref =
        soft_threshold(&x.add(&rep.w.matvec_t(&resid).unwrap()), 0.05).unwrap();
    worst_c = worst_c.max(max_abs_diff(&out.x_next, &cp_ref));

    // support-selection form
    let extras = CpExtras { keep_count: Some(7), ..Default::default() };
    let out = steps::cp_step(
        &p,
        &x,
        &zero,
        &none,
        0,
        &rep.w,
        1.0,
        &rep.w,
        1.0,
        0.05,
        0.07,
        AlphaSpec::Override(1.0),
        &extras,
        1e-12,
    )
    .unwrap();
    let ss_ref =
        ss_threshold(&x.add(&rep.w.matvec_t(&resid).unwrap()), 0.05, 7).unwrap();
    worst_c = worst_c.max(max_abs_diff(&out.x_next, &ss_ref));

    // analytic-weight form with the first-stage scale
    let out = steps::cp_step(
        &p,
        &x,
        &zero,
        &none,
        0,
        &rep.w,
        0.8,
        &rep.w,
        1.0,
        0.05,
        0.07,
        AlphaSpec::Override(1.0),
        &CpExtras::default(),
        1e-12,
    )
    .unwrap();
    let al_ref = soft_threshold(
        &x.lincomb(1.0, &rep.w.matvec_t(&resid).unwrap(), 0.8),
        0.05,
    )
    .unwrap();
    worst_c = worst_c.max(max_abs_diff(&out.x_next, &al_ref));

    // extragradient form -> two multistage half-steps
    let th = HelistaThetas { theta: [0.05, 0.04, 0.03, 0.02], eps: [1.0; 4] };
    let gammas = [0.5, 1.0, 1.5, 0.5];
    let out = steps::helista_step(
        &p,
        &x,
        &zero,
        &none,
        0,
        &rep.w,
        gammas,
        &th,
        AlphaSpec::Override(1.0),
        1e-12,
    )
    .unwrap();
    let v_ref = multistage_threshold(
        &x.lincomb(1.0, &rep.w.matvec_t(&resid).unwrap(), gammas[0]),
        th.theta[0],
        th.theta_hat(0),
    )
    .unwrap();
    let rv = p.b.sub(&p.a.matvec(&v_ref).unwrap());
    let vh_ref = multistage_threshold(
        &x.lincomb(1.0, &rep.w.matvec_t(&rv).unwrap(), gammas[1]),
        th.theta[1],
        th.theta_hat(1),
    )
    .unwrap();
    worst_c = worst_c.max(max_abs_diff(&out.x_next, &vh_ref));

    assert!(worst_c <= 1e-12, "zero-operator reductions drifted by {worst_c}");
    println!(
        "acceptance 06 reduction identities: PASS (max drifts {worst_a:.1e} / {worst_b:.1e} / {worst_c:.1e})"
    );
}

// 7. Gradient soundness: central differences agree with the tape on every
//    op kind and through a K = 3 unrolled coupled-weight model.
#[test]
fn acceptance_07_autodiff_soundness() {
    // --- every op kind in one composite graph ---
    let mut g = SplitMix64::stream(2024, stream::INIT);
    let n = 6usize;
    let m = 4usize;
    let base: Vec<f64> = (0..n).map(|_| 1.5 * g.next_gaussian()).collect();
    let mat: Vec<f64> = (0..m * n).map(|_| g.next_gaussian()).collect();
    let kern: Vec<f64> = (0..2 * 2 * 3).map(|_| g.next_gaussian()).collect();
    let chans: Vec<f64> = (0..2 * n).map(|_| g.next_gaussian()).collect();

    let build = |x: &[f64], w: &[f64], k: &[f64]| -> (Tape, Vec<ulz::autodiff::NodeId>, ulz::autodiff::NodeId) {
        let mut t = Tape::new();
        let xv = t.leaf(Shape::Vector(n), x.to_vec()).unwrap();
        let wv = t.leaf(Shape::Matrix(m, n), w.to_vec()).unwrap();
        let kv = t.leaf(Shape::Matrix(2, 6), k.to_vec()).unwrap();
        let ch = t.leaf(Shape::Matrix(2, n), chans.clone()).unwrap();
        // add, sub, scale, hadamard, smul
        let a = t.add(xv, xv).unwrap();
        let s = t.sub(a, xv).unwrap();
        let sc = t.scale(s, 0.7, 0.1);
        let h = t.hadamard(sc, xv).unwrap();
        let smuls = t.scalar(1.3);
        let sm = t.smul(smuls, h).unwrap();
        // matvec both directions, matmul
        let mv = t.matvec(wv, sm, false).unwrap();
        let mvt = t.matvec(wv, mv, true).unwrap();
        let rect = {
            let mut data = vec![0.0; n * m];
            for (i, v) in base.iter().cycle().take(n * m).enumerate() {
                data[i] = 0.3 + 0.1 * v;
            }
            t.leaf(Shape::Matrix(n, m), data).unwrap()
        };
        let mm = t.matmul(wv, rect).unwrap();
        // conv across channels
        let cv = t.conv1d(kv, ch).unwrap();
        // nonlinearities
        let r = t.relu(mvt);
        let sg = t.sigmoid_node(r);
        let shifted = t.scale(sg, 1.0, 1.2);
        let rc = t.recip(shifted);
        let sq = t.sqrt(shifted);
        // shrinkage family
        let th = t.scalar(0.4);
        let hat = t.scalar(1.6);
        let st = t.soft_threshold(xv, th).unwrap();
        let sst = t.ss_threshold(xv, th, 2).unwrap();
        let mt = t.multistage_threshold(xv, th, hat).unwrap();
        // clamp
        let raw = t.scalar(0.2);
        let ac = t.affine_clamp(raw, 0.25, 0.5).unwrap();
        // reductions: sum_sq + abs_sum over everything
        let mut loss = t.sum_sq(rc);
        for node in [sq, st, sst, mt, cv, mm] {
            let part = t.sum_sq(node);
            loss = t.add(loss, part).unwrap();
        }
        let l1 = t.abs_sum(mvt);
        loss = t.add(loss, l1).unwrap();
        let acs = t.smul(ac, loss).unwrap();
        (t, vec![xv, wv, kv, th, hat, raw], acs)
    };
    let (t, nodes, loss) = build(&base, &mat, &kern);
    let adj = t.backward(loss).unwrap();
    let h = 1e-6;
    let mut max_rel = 0.0f64;
    {
        // vector input
        for i in 0..n {
            let (mut xp, mut xm) = (base.clone(), base.clone());
            xp[i] += h;
            xm[i] -= h;
            let fp = build(&xp, &mat, &kern).0.scalar_value(loss);
            let fm = build(&xm, &mat, &kern).0.scalar_value(loss);
            let fd = (fp - fm) / (2.0 * h);
            let ad = adj[nodes[0].0][i];
            max_rel = max_rel.max((fd - ad).abs() / fd.abs().max(ad.abs()).max(1.0));
        }
        // matrix and kernel inputs (sampled)
        for i in (0..m * n).step_by(3) {
            let (mut wp, mut wm) = (mat.clone(), mat.clone());
            wp[i] += h;
            wm[i] -= h;
            let fd = (build(&base, &wp, &kern).0.scalar_value(loss)
                - build(&base, &wm, &kern).0.scalar_value(loss))
                / (2.0 * h);
            let ad = adj[nodes[1].0][i];
            max_rel = max_rel.max((fd - ad).abs() / fd.abs().max(ad.abs()).max(1.0));
        }
        for i in 0..kern.len() {
            let (mut kp, mut km) = (kern.clone(), kern.clone());
            kp[i] += h;
            km[i] -= h;
            let fd = (build(&base, &mat, &kp).0.scalar_value(loss)
                - build(&base, &mat, &km).0.scalar_value(loss))
                / (2.0 * h);
            let ad = adj[nodes[2].0][i];
            max_rel = max_rel.max((fd - ad).abs() / fd.abs().max(ad.abs()).max(1.0));
        }
    }
    assert!(max_rel < 1e-5, "per-op gradcheck max rel err {max_rel}");

    // --- full unrolled K = 3 coupled-weight model, 200 random probes ---
    let p = generate_problem(&GenSpec {
        m: 16,
        n: 32,
        bernoulli_p: 0.15,
        condition_number: None,
        snr_db: None,
        seed: 77,
    })
    .unwrap();
    let cfg = HybridConfig {
        variant: Variant::HlistaCp,
        k: 3,
        mode: Mode::Untrained,
        seed: 77,
        ..Default::default()
    };
    let op = conv_op();
    let store = hybrid::init_store(&p, &cfg, &op).unwrap();
    let lip = spectral_norm_sq(&p.a, 1e-12, 100_000).unwrap();
    let eval = |s: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let r = record_model(&mut tape, &p, &cfg, &op, s, lip).unwrap();
        let l = mse_loss(&mut tape, r.x_k, &p.x_star).unwrap();
        tape.scalar_value(l)
    };
    let mut tape = Tape::new();
    let rec = record_model(&mut tape, &p, &cfg, &op, &store, lip).unwrap();
    let loss = mse_loss(&mut tape, rec.x_k, &p.x_star).unwrap();
    let adj = tape.backward(loss).unwrap();

    let names: Vec<String> = rec.param_nodes.keys().cloned().collect();
    let mut probe_rng = SplitMix64::stream(4242, stream::TRAIN);
    let mut model_rel = 0.0f64;
    for _ in 0..200 {
        let name = &names[(probe_rng.next_u64() % names.len() as u64) as usize];
        let node = rec.param_nodes[name];
        let len = store.get(name).unwrap().raw.len();
        let idx = (probe_rng.next_u64() % len as u64) as usize;
        let mut sp = store.clone();
        sp.get_mut(name).unwrap().raw[idx] += h;
        let mut sm = store.clone();
        sm.get_mut(name).unwrap().raw[idx] -= h;
        let fd = (eval(&sp) - eval(&sm)) / (2.0 * h);
        let ad = adj[node.0][idx];
        let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1.0);
        assert!(rel < 1e-5, "{name}[{idx}]: fd {fd} vs ad {ad} (rel {rel})");
        model_rel = model_rel.max(rel);
    }
    println!(
        "acceptance 07 autodiff soundness: PASS (ops max rel {max_rel:.2e}, \
         unrolled 200 probes max rel {model_rel:.2e})"
    );
}

// 8. Learnable-parameter counts at K = 16, M = 250, N = 500.
#[test]
fn acceptance_08_parameter_counts() {
    let op = conv_op();
    let cases = [
        (Variant::HlistaCp, 127_640usize),
        (Variant::Hcista, 2655),
        (Variant::HcistaF, 2639),
        (Variant::Helista, 127_848),
    ];
    for (variant, want) in cases {
        let store =
            ulz::train::variant_store_for_count(variant, 16, 250, 500, &op).unwrap();
        let got = count_parameters(&store);
        assert_eq!(got, want, "{}", variant.name());
    }
    let alista = count_parameters(&ulz::train::alista_form_store(16));
    assert_eq!(alista, 32);
    println!(
        "acceptance 08 parameter counts: PASS (127640 / 2655 / 2639 / 32 / 127848 exact)"
    );
}

// 9. Desk-scale training win: the trained unrolled model beats ISTA at the
//    same depth by at least 3 dB and strictly beats its initialization.
#[test]
fn acceptance_09_training_win() {
    let t0 = Instant::now();
    let k = 8;
    let sampler = ProblemSampler::from_spec(&GenSpec {
        m: 64,
        n: 128,
        bernoulli_p: 0.1,
        condition_number: None,
        snr_db: None,
        seed: 11,
    })
    .unwrap();
    let cfg = HybridConfig {
        variant: Variant::HlistaCp,
        k,
        lambda0: 0.1,
        mode: Mode::Untrained,
        seed: 11,
        ..Default::default()
    };
    let op = conv_op();
    let template = sampler.instance(0).unwrap();
    let store = hybrid::init_store(&template, &cfg, &op).unwrap();
    let test_range = 2000..2100u64;
    let untrained = validation_nmse_db(&sampler, test_range.clone(), &cfg, &op, &store).unwrap();

    let mut num = 0.0;
    let mut den = 0.0;
    for i in test_range.clone() {
        let p = sampler.instance(i).unwrap();
        let t = ista_run(&p, &ClassicalConfig { lambda: 0.1, k, ..Default::default() }).unwrap();
        num += t.last().unwrap().sub(&p.x_star).norm2_sq();
        den += p.x_star.norm2_sq();
    }
    let ista8 = 10.0 * (num / den).log10();

    let mut stages = Vec::new();
    for s in 1..=k {
        stages.push(StageSpec { unfreeze_upto: s, newest_only: true, lr: 5e-3, steps: 24 });
        stages.push(StageSpec { unfreeze_upto: s, newest_only: false, lr: 1e-3, steps: 16 });
    }
    let tc = TrainConfig {
        stages,
        batch_size: 24,
        train_size: 2000,
        val_size: 100,
        seed: 11,
        jobs: 4,
    };
    let (trained, _) = stagewise_train(&sampler, &cfg, &op, &tc, store).unwrap();
    let final_nmse = validation_nmse_db(&sampler, test_range, &cfg, &op, &trained).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    assert!(
        final_nmse <= ista8 - 3.0,
        "trained {final_nmse:.2} dB not 3 dB under ista {ista8:.2} dB"
    );
    assert!(final_nmse < untrained, "trained {final_nmse:.2} >= untrained {untrained:.2}");
    assert!(dt < 600.0, "runtime {dt:.0}s exceeds 10 min");
    println!(
        "acceptance 09 training win: PASS (trained {final_nmse:.2} dB vs ista {ista8:.2} dB \
         vs untrained {untrained:.2} dB, {dt:.0}s)"
    );
}

/// Proximal coordinate descent, run to stagnation; the independent oracle
/// for the classical solvers.
fn coordinate_descent_oracle(p: &ProblemInstance, lambda: f64) -> DenseVector {
    let n = p.n();
    let mut x = DenseVector::zeros(n);
    let cols: Vec<Vec<f64>> = (0..n).map(|j| p.a.col(j)).collect();
    let col_sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut r = p.b.clone(); // residual b - A x
    for _ in 0..200_000 {
        let mut max_change = 0.0f64;
        for j in 0..n {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = x.data[j];
            let rho: f64 =
                cols[j].iter().zip(&r.data).map(|(a, ri)| a * ri).sum::<f64>() + col_sq[j] * old;
            let new = {
                let z = rho;
                if z > lambda {
                    (z - lambda) / col_sq[j]
                } else if z < -lambda {
                    (z + lambda) / col_sq[j]
                } else {
                    0.0
                }
            };
            if new != old {
                for i in 0..p.m() {
                    r.data[i] -= cols[j][i] * (new - old);
                }
                x.data[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < 1e-12 {
            break;
        }
    }
    x
}

// 10. ISTA / FISTA / ADMM all land on the coordinate-descent solution.
#[test]
fn acceptance_10_oracle_equivalence() {
    let lambda = 0.05;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let p = generate_problem(&GenSpec {
            m: 5,
            n: 8,
            bernoulli_p: 0.3,
            condition_number: None,
            snr_db: None,
            seed,
        })
        .unwrap();
        let oracle = coordinate_descent_oracle(&p, lambda);
        assert!(oracle.norm2() > 0.0, "seed {seed}: oracle solution is zero");
        let cfg = ClassicalConfig { lambda, k: 20_000, ..Default::default() };
        let ista = ista_run(&p, &cfg).unwrap();
        let cfg_f = ClassicalConfig { lambda, k: 5_000, ..Default::default() };
        let fista = fista_run(&p, &cfg_f).unwrap();
        let cfg_a = ClassicalConfig { lambda, k: 5_000, rho: 1.0, ..Default::default() };
        let admm = admm_lasso_run(&p, &cfg_a).unwrap();
        for (tag, x) in [
            ("ista", ista.last().unwrap()),
            ("fista", fista.last().unwrap()),
            ("admm", admm.last().unwrap()),
        ] {
            let db = nmse_db(x, &oracle).unwrap();
            assert!(db <= -80.0, "seed {seed} {tag}: {db:.1} dB vs oracle");
            worst = worst.max(db);
        }
    }
    println!("acceptance 10 oracle equivalence: PASS (worst agreement {worst:.1} dB <= -80 dB)");
}

// 11. The contraction-ratio monitor: finite everywhere, and bounded by the
//     layer-norm product plus one under the difference-form operator.
#[test]
fn acceptance_11_eta_monitor() {
    // finite ratios across 100 runs of the residual conv operator
    let op = conv_op();
    let mut runs = 0;
    let mut etas = 0usize;
    for seed in 0..100u64 {
        let p = desk_instance(300 + seed);
        let cfg = HybridConfig {
            variant: Variant::Hcista,
            k: 16,
            c_lambda: DESK_C_LAMBDA,
            mode: Mode::Untrained,
            seed,
            ..Default::default()
        };
        let (trace, _) = hybrid::run(&p, &cfg, &op).unwrap();
        for n in 1..=16 {
            if let Some(e) = trace.diag(n, "eta") {
                assert!(e.is_finite(), "seed {seed} n {n}: eta not finite");
                etas += 1;
            }
        }
        runs += 1;
    }
    assert_eq!(runs, 100);
    assert!(etas > 1500, "only {etas} eta samples recorded");

    // difference-form operator: eta <= layer-norm product + 1 at every step
    let spec = ConvStackSpec::default();
    let lip_op = Operator::lipschitz_residual(spec.clone());
    let mut worst_slack = f64::INFINITY;
    for seed in 0..100u64 {
        let p = desk_instance(700 + seed);
        let cfg = HybridConfig {
            variant: Variant::Hcista,
            k: 16,
            c_lambda: DESK_C_LAMBDA,
            mode: Mode::Untrained,
            seed,
            ..Default::default()
        };
        let mut store = ParamStore::new();
        lip_op.init_params(&mut store, cfg.k, cfg.seed ^ 0x5eed, false).unwrap();
        let bound = spec.lipschitz_bound(&store, 0).unwrap() + 1.0;
        let trace = hybrid::run_hcista_untrained(&p, &cfg, &lip_op, &store).unwrap();
        for n in 1..=16 {
            if let Some(e) = trace.diag(n, "eta") {
                assert!(
                    e <= bound + 1e-9,
                    "seed {seed} n {n}: eta {e} above bound {bound}"
                );
                worst_slack = worst_slack.min(bound - e);
            }
        }
    }
    println!(
        "acceptance 11 eta monitor: PASS (100 finite runs; difference form kept \
         {worst_slack:.3} below its bound)"
    );
}
