//! Per-iteration update rules for the hybrid family, on plain values.
//!
//! Every variant shares the same skeleton: a proximal half-step produces v,
//! the free-form operator maps v to u, a second proximal half-step produces
//! w, and the next iterate is the convex combination alpha*v + (1-alpha)*w.
//! The variants differ in the linear map, the shrinkage operator, and the
//! constraint that pins alpha's admissible interval.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::neuralop::{eta_ratio, Eta, Operator};
use crate::problem::ProblemInstance;
use crate::thresh::{multistage_threshold, soft_threshold, ss_threshold, top_k_indices};

/// How the mixing weight is produced once its admissible interval
/// [lower, 1) is known.
#[derive(Debug, Clone, Copy)]
pub enum AlphaSpec {
    /// lower + offset, kept strictly below 1.
    LowerPlus(f64),
    /// lower + u * (1 - lower) for a caller-supplied uniform u in [0, 1).
    Uniform(f64),
    /// Supplied value, validated against [lower, 1).
    Checked(f64),
    /// Supplied value, range check skipped (reduction/diagnostic runs).
    Override(f64),
}

pub fn resolve_alpha(spec: AlphaSpec, lower: f64) -> Result<f64> {
    match spec {
        AlphaSpec::LowerPlus(off) => Ok((lower + off).min(1.0 - 1e-12).max(lower)),
        AlphaSpec::Uniform(u) => Ok(lower + u * (1.0 - lower)),
        AlphaSpec::Checked(a) => {
            if a < lower || a >= 1.0 {
                return Err(Error::Constraint(format!(
                    "alpha {a} outside its admissible interval [{lower}, 1)"
                )));
            }
            Ok(a)
        }
        AlphaSpec::Override(a) => Ok(a),
    }
}

/// Everything a single step produces; the runner keeps what it needs.
#[derive(Debug, Clone)]
pub struct StepOut {
    pub x_next: DenseVector,
    pub v: DenseVector,
    pub u: DenseVector,
    pub w: DenseVector,
    /// HELISTA half-step iterates.
    pub v_half: Option<DenseVector>,
    pub w_half: Option<DenseVector>,
    /// Support-selection pass-through indices used for v and w (CPSS).
    pub pass_v: Option<Vec<usize>>,
    pub pass_w: Option<Vec<usize>>,
    pub in_t: bool,
    pub diag: BTreeMap<String, f64>,
}

fn base_diag(alpha: f64, lower: f64, eta: Eta, in_t: bool) -> BTreeMap<String, f64> {
    let mut d = BTreeMap::new();
    d.insert("alpha".into(), alpha);
    d.insert("alpha_lower".into(), lower);
    if let Eta::Ratio(r) = eta {
        d.insert("eta".into(), r);
    }
    d.insert("in_t".into(), f64::from(u8::from(in_t)));
    d
}

/// Validated HCISTA schedule pieces for one iteration.
#[derive(Debug, Clone, Copy)]
pub struct HcistaParams {
    pub delta: f64,
    pub t: f64,
    pub lambda: f64,
}

/// Range checks: delta in (0.25, 0.5), t in
/// [1/(4 delta L), 1/L], lambda positive. `free_step` lifts the (delta, t)
/// checks for the free-parameter variant.
pub fn validate_hcista_params(p: &HcistaParams, lip: f64, free_step: bool) -> Result<()> {
    if !free_step {
        if !(p.delta > 0.25 && p.delta < 0.5) {
            return Err(Error::Constraint(format!(
                "delta {} outside (0.25, 0.5)",
                p.delta
            )));
        }
        let lo = 1.0 / (4.0 * p.delta * lip);
        let hi = 1.0 / lip;
        if p.t < lo * (1.0 - 1e-12) || p.t > hi * (1.0 + 1e-12) {
            return Err(Error::Constraint(format!(
                "step {} outside [1/(4 delta ||A||^2) = {lo}, 1/||A||^2 = {hi}]",
                p.t
            )));
        }
    } else if !(p.t > 0.0) {
        return Err(Error::Constraint(format!("step {} must be positive", p.t)));
    }
    if !(p.lambda > 0.0) {
        return Err(Error::Constraint(format!(
            "lambda {} violates strict positivity",
            p.lambda
        )));
    }
    Ok(())
}

/// The lower end of alpha's interval for the classical-parameter variant:
/// ||u-x||^2 / (||u-x||^2 + (1 - 2 t delta ||A||^2) ||v-x||^2).
pub fn hcista_alpha_lower(
    u_minus_x_sq: f64,
    v_minus_x_sq: f64,
    t: f64,
    delta: f64,
    lip: f64,
) -> f64 {
    let coef = 1.0 - 2.0 * t * delta * lip;
    u_minus_x_sq / (u_minus_x_sq + coef * v_minus_x_sq)
}

/// One HCISTA iteration. `free_step` switches to the free-parameter
/// variant, whose alpha interval is [1/2, 1).
#[allow(clippy::too_many_arguments)]
pub fn hcista_step(
    problem: &ProblemInstance,
    lip: f64,
    x: &DenseVector,
    op: &Operator,
    params: &crate::autodiff::ParamStore,
    iter: usize,
    hp: HcistaParams,
    alpha: AlphaSpec,
    free_step: bool,
    tol: f64,
) -> Result<StepOut> {
    validate_hcista_params(&hp, lip, free_step)?;
    let grad_x = problem.a.matvec_t(&problem.a.matvec(x)?.sub(&problem.b))?;
    let v = soft_threshold(&x.lincomb(1.0, &grad_x, -hp.t), hp.lambda * hp.t)?;
    let u = op.apply(&v, x, params, iter)?;
    let grad_u = problem.a.matvec_t(&problem.a.matvec(&u)?.sub(&problem.b))?;
    let w = soft_threshold(&u.lincomb(1.0, &grad_u, -hp.t), hp.lambda * hp.t)?;

    let eta = eta_ratio(&u, x, &v, tol);
    if matches!(eta, Eta::InT) {
        let mut diag = base_diag(1.0, 1.0, eta, true);
        diag.insert("lambda".into(), hp.lambda);
        diag.insert("t".into(), hp.t);
        diag.insert("delta".into(), hp.delta);
        return Ok(StepOut {
            x_next: x.clone(),
            v,
            u,
            w,
            v_half: None,
            w_half: None,
            pass_v: None,
            pass_w: None,
            in_t: true,
            diag,
        });
    }

    let lower = if free_step {
        0.5
    } else {
        hcista_alpha_lower(
            u.sub(x).norm2_sq(),
            v.sub(x).norm2_sq(),
            hp.t,
            hp.delta,
            lip,
        )
    };
    let a = resolve_alpha(alpha, lower)?;
    let x_next = v.lincomb(a, &w, 1.0 - a);
    let mut diag = base_diag(a, lower, eta, false);
    diag.insert("lambda".into(), hp.lambda);
    diag.insert("t".into(), hp.t);
    diag.insert("delta".into(), hp.delta);
    Ok(StepOut {
        x_next,
        v,
        u,
        w,
        v_half: None,
        w_half: None,
        pass_v: None,
        pass_w: None,
        in_t: false,
        diag,
    })
}

/// Optional pieces layered on the coupled-weight step.
#[derive(Default)]
pub struct CpExtras<'a> {
    /// Support-selection keep count (CPSS); `None` means plain soft
    /// thresholding.
    pub keep_count: Option<usize>,
    /// Elementwise gain vector g = 1 + kappa (HGLISTA); `None` means 1.
    pub gain: Option<DenseVector>,
    /// v-side overshoot vector, a function of the current iterate.
    pub overshoot1: Option<DenseVector>,
    /// w-side overshoot builder; fed the operator output u once it exists.
    #[allow(clippy::type_complexity)]
    pub overshoot2: Option<&'a dyn Fn(&DenseVector) -> Result<DenseVector>>,
}

/// One coupled-weight iteration (HLISTA-CP and its CPSS / HALISTA /
/// HGLISTA dressings):
///   v = T(g.x + gbar Wbar' (b - A(g.x)))
///   u = N(v)
///   w = T(g.u + ghat What' (b - A(g.u)))
/// with T soft or support-selecting, optional overshoot blends, and
/// alpha in [theta2/(theta1+theta2), 1).
#[allow(clippy::too_many_arguments)]
pub fn cp_step(
    problem: &ProblemInstance,
    x: &DenseVector,
    op: &Operator,
    params: &crate::autodiff::ParamStore,
    iter: usize,
    w_bar: &DenseMatrix,
    gbar: f64,
    w_hat: &DenseMatrix,
    ghat: f64,
    theta1: f64,
    theta2: f64,
    alpha: AlphaSpec,
    extras: &CpExtras,
    tol: f64,
) -> Result<StepOut> {
    if theta1 < 0.0 || theta2 < 0.0 {
        return Err(Error::Constraint(format!(
            "thresholds must be nonnegative, got {theta1}, {theta2}"
        )));
    }
    let n = problem.n();
    let gx = match &extras.gain {
        Some(g) => DenseVector::new(
            x.data.iter().zip(&g.data).map(|(a, b)| a * b).collect(),
        ),
        None => x.clone(),
    };
    let r1 = problem.b.sub(&problem.a.matvec(&gx)?);
    let pre_v = gx.lincomb(1.0, &w_bar.matvec_t(&r1)?, gbar);
    let (v_bar, pass_v) = match extras.keep_count {
        Some(k) => {
            let keep = top_k_indices(&pre_v, k);
            (ss_threshold(&pre_v, theta1, k)?, Some(keep))
        }
        None => (soft_threshold(&pre_v, theta1)?, None),
    };
    let v = match &extras.overshoot1 {
        Some(o1) => DenseVector::new(
            (0..n)
                .map(|i| o1.data[i] * v_bar.data[i] + (1.0 - o1.data[i]) * x.data[i])
                .collect(),
        ),
        None => v_bar,
    };

    let u = op.apply(&v, x, params, iter)?;

    let gu = match &extras.gain {
        Some(g) => DenseVector::new(
            u.data.iter().zip(&g.data).map(|(a, b)| a * b).collect(),
        ),
        None => u.clone(),
    };
    let r2 = problem.b.sub(&problem.a.matvec(&gu)?);
    let pre_w = gu.lincomb(1.0, &w_hat.matvec_t(&r2)?, ghat);
    let (w_bar_vec, pass_w) = match extras.keep_count {
        Some(k) => {
            let keep = top_k_indices(&pre_w, k);
            (ss_threshold(&pre_w, theta2, k)?, Some(keep))
        }
        None => (soft_threshold(&pre_w, theta2)?, None),
    };
    let w = match &extras.overshoot2 {
        Some(build) => {
            let o2 = build(&u)?;
            DenseVector::new(
                (0..n)
                    .map(|i| o2.data[i] * w_bar_vec.data[i] + (1.0 - o2.data[i]) * u.data[i])
                    .collect(),
            )
        }
        None => w_bar_vec,
    };

    let eta = eta_ratio(&u, x, &v, tol);
    let frozen = matches!(eta, Eta::InT);
    let (a, lower) = if frozen || theta1 == 0.0 {
        (1.0, 1.0)
    } else {
        let lower = theta2 / (theta1 + theta2);
        (resolve_alpha(alpha, lower)?, lower)
    };
    // alpha = 1 collapses the combination onto v
    let x_next = if a == 1.0 { v.clone() } else { v.lincomb(a, &w, 1.0 - a) };
    let mut diag = base_diag(a, lower, eta, frozen);
    diag.insert("theta1".into(), theta1);
    diag.insert("theta2".into(), theta2);
    if let Some(k) = extras.keep_count {
        diag.insert("keep_count".into(), k as f64);
    }
    Ok(StepOut {
        x_next,
        v,
        u,
        w,
        v_half: None,
        w_half: None,
        pass_v,
        pass_w,
        in_t: frozen,
        diag,
    })
}

/// Stage thresholds for the extragradient variant.
#[derive(Debug, Clone, Copy)]
pub struct HelistaThetas {
    pub theta: [f64; 4],
    pub eps: [f64; 4],
}

impl HelistaThetas {
    pub fn theta_hat(&self, l: usize) -> f64 {
        (1.0 + 1.0 / self.eps[l]) * self.theta[l]
    }
}

fn multistage_or_identity(z: &DenseVector, theta: f64, theta_hat: f64) -> Result<DenseVector> {
    if theta == 0.0 {
        Ok(z.clone())
    } else {
        multistage_threshold(z, theta, theta_hat)
    }
}

/// One HELISTA iteration: two extragradient half-steps on each side of the
/// operator, all four stages through the multistage threshold, and
/// alpha in [(g4 t3 + t4)/(g2 t1 + t2 + g4 t3 + t4), 1).
#[allow(clippy::too_many_arguments)]
pub fn helista_step(
    problem: &ProblemInstance,
    x: &DenseVector,
    op: &Operator,
    params: &crate::autodiff::ParamStore,
    iter: usize,
    w: &DenseMatrix,
    gammas: [f64; 4],
    th: &HelistaThetas,
    alpha: AlphaSpec,
    tol: f64,
) -> Result<StepOut> {
    for (l, g) in gammas.iter().enumerate() {
        if !(*g > 0.0) {
            return Err(Error::Constraint(format!("gamma{} = {g} must be positive", l + 1)));
        }
    }
    for l in 0..4 {
        if th.theta[l] < 0.0 {
            return Err(Error::Constraint(format!("theta{} negative", l + 1)));
        }
        if th.theta[l] > 0.0 && !(th.eps[l] > 0.0) {
            return Err(Error::Constraint(format!("epsilon{} must be positive", l + 1)));
        }
    }
    let residual = |z: &DenseVector| -> Result<DenseVector> {
        Ok(problem.b.sub(&problem.a.matvec(z)?))
    };

    let rv = residual(x)?;
    let v = multistage_or_identity(
        &x.lincomb(1.0, &w.matvec_t(&rv)?, gammas[0]),
        th.theta[0],
        th.theta_hat(0),
    )?;
    let rvh = residual(&v)?;
    let v_half = multistage_or_identity(
        &x.lincomb(1.0, &w.matvec_t(&rvh)?, gammas[1]),
        th.theta[1],
        th.theta_hat(1),
    )?;

    let u = op.apply(&v_half, x, params, iter)?;

    let rw = residual(&u)?;
    let wv = multistage_or_identity(
        &u.lincomb(1.0, &w.matvec_t(&rw)?, gammas[2]),
        th.theta[2],
        th.theta_hat(2),
    )?;
    let rwh = residual(&wv)?;
    let w_half = multistage_or_identity(
        &u.lincomb(1.0, &w.matvec_t(&rwh)?, gammas[3]),
        th.theta[3],
        th.theta_hat(3),
    )?;

    let eta = eta_ratio(&u, x, &v_half, tol);
    let frozen = matches!(eta, Eta::InT);
    let (a, lower) = if frozen || (th.theta[0] == 0.0 && th.theta[1] == 0.0) {
        (1.0, 1.0)
    } else {
        let num = gammas[3] * th.theta[2] + th.theta[3];
        let den = gammas[1] * th.theta[0] + th.theta[1] + num;
        let lower = num / den;
        (resolve_alpha(alpha, lower)?, lower)
    };
    let x_next = if a == 1.0 {
        v_half.clone()
    } else {
        v_half.lincomb(a, &w_half, 1.0 - a)
    };
    let mut diag = base_diag(a, lower, eta, frozen);
    for l in 0..4 {
        diag.insert(format!("theta{}", l + 1), th.theta[l]);
    }
    Ok(StepOut {
        x_next,
        v,
        u,
        w: wv,
        v_half: Some(v_half),
        w_half: Some(w_half),
        pass_v: None,
        pass_w: None,
        in_t: frozen,
        diag,
    })
}

/// Support-selection percentage schedule: p_n = min(p*n, p_max) percent,
/// keep_count = floor(p_n / 100 * N).
pub fn cpss_keep_count(p: f64, p_max: f64, n_dim: usize, iter: usize) -> usize {
    let pct = (p * iter as f64).min(p_max);
    ((pct / 100.0) * n_dim as f64).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use crate::dictgen::{generate_problem, GenSpec};
    use crate::linalg::spectral_norm_sq;

    fn problem(seed: u64) -> ProblemInstance {
        generate_problem(&GenSpec {
            m: 12,
            n: 24,
            bernoulli_p: 0.15,
            condition_number: None,
            snr_db: None,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn cpss_schedule_matches_published_setting() {
        assert_eq!(cpss_keep_count(0.7, 13.0, 500, 10), 35);
        assert_eq!(cpss_keep_count(0.7, 13.0, 500, 0), 0);
        // saturation at p_max
        assert_eq!(cpss_keep_count(0.7, 13.0, 500, 100), 65);
    }

    #[test]
    fn hcista_alpha_lower_with_eta_one() {
        // u = v gives lower = 1/(2 - 2 t delta L), strictly below 1 on the
        // admissible (delta, t) box
        let (t, delta, lip) = (0.8, 0.3, 1.0);
        let s = 1.7;
        let lower = hcista_alpha_lower(s, s, t, delta, lip);
        let expect = 1.0 / (2.0 - 2.0 * t * delta * lip);
        assert!((lower - expect).abs() < 1e-15);
        // interval sweep over the allowed box
        for di in 1..20 {
            let d = 0.25 + 0.25 * di as f64 / 20.0;
            for ti in 0..=20 {
                let lo = 1.0 / (4.0 * d * lip);
                let hi = 1.0 / lip;
                let t = lo + (hi - lo) * ti as f64 / 20.0;
                let coef = 1.0 - 2.0 * t * d * lip;
                assert!(coef > 0.0, "coef {coef} at d={d} t={t}");
                assert!(hcista_alpha_lower(s, s, t, d, lip) < 1.0);
            }
        }
    }

    #[test]
    fn hcista_step_rejects_bad_params() {
        let p = problem(1);
        let lip = spectral_norm_sq(&p.a, 1e-12, 100_000).unwrap();
        let x = DenseVector::zeros(p.n());
        let op = Operator::zero();
        let bad = HcistaParams { delta: 0.6, t: 0.5 / lip, lambda: 0.1 };
        let err = hcista_step(
            &p,
            lip,
            &x,
            &op,
            &ParamStore::new(),
            0,
            bad,
            AlphaSpec::LowerPlus(1e-6),
            false,
            1e-12,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("delta"));
    }

    #[test]
    fn cp_step_theta_symmetry_and_zero_clause() {
        let p = problem(2);
        let lip = spectral_norm_sq(&p.a, 1e-12, 100_000).unwrap();
        let t = 1.0 / lip;
        let mut wt = p.a.transpose();
        wt.scale_in_place(t);
        let w = wt.transpose(); // t * A as an M x N "W"
        let x = DenseVector::zeros(p.n());
        let op = Operator::zero();
        // theta1 = theta2 -> lower bound exactly 1/2
        let out = cp_step(
            &p,
            &x,
            &op,
            &ParamStore::new(),
            0,
            &w,
            1.0,
            &w,
            1.0,
            0.3,
            0.3,
            AlphaSpec::LowerPlus(0.0),
            &CpExtras::default(),
            1e-12,
        )
        .unwrap();
        assert!((out.diag["alpha_lower"] - 0.5).abs() < 1e-15);
        // theta1 = 0 -> alpha = 1 and x' = v
        let out = cp_step(
            &p,
            &x,
            &op,
            &ParamStore::new(),
            0,
            &w,
            1.0,
            &w,
            1.0,
            0.0,
            0.3,
            AlphaSpec::LowerPlus(0.0),
            &CpExtras::default(),
            1e-12,
        )
        .unwrap();
        assert_eq!(out.diag["alpha"], 1.0);
        assert_eq!(out.x_next.data, out.v.data);
    }

    #[test]
    fn cp_with_full_passthrough_keeps_pre_threshold_vector() {
        let p = problem(3);
        let lip = spectral_norm_sq(&p.a, 1e-12, 100_000).unwrap();
        let t = 1.0 / lip;
        let mut w = p.a.clone();
        w.scale_in_place(t);
        let x = DenseVector::zeros(p.n());
        let op = Operator::zero();
        let extras = CpExtras { keep_count: Some(p.n()), ..Default::default() };
        let out = cp_step(
            &p,
            &x,
            &op,
            &ParamStore::new(),
            0,
            &w,
            1.0,
            &w,
            1.0,
            0.05,
            0.05,
            AlphaSpec::LowerPlus(1e-6),
            &extras,
            1e-12,
        )
        .unwrap();
        // keep = N: entries above theta pass through; verify v matches a
        // direct recomputation of the pre-threshold vector on the
        // super-threshold set
        let pre = w
            .matvec_t(&p.b.sub(&p.a.matvec(&x).unwrap()))
            .unwrap();
        for i in 0..p.n() {
            if pre.data[i].abs() > 0.05 {
                assert_eq!(out.v.data[i], pre.data[i]);
            }
        }
    }

    #[test]
    fn helista_symmetric_thetas_give_half_lower_bound() {
        let p = problem(4);
        let w = crate::dictgen::analytic_w(&p.a).unwrap().w;
        let x = DenseVector::zeros(p.n());
        let op = Operator::zero();
        let th = HelistaThetas { theta: [0.2; 4], eps: [1.0; 4] };
        // gamma2 = gamma4 makes the mixing lower bound exactly 1/2
        let out = helista_step(
            &p,
            &x,
            &op,
            &ParamStore::new(),
            0,
            &w,
            [0.5, 0.8, 1.5, 0.8],
            &th,
            AlphaSpec::LowerPlus(0.0),
            1e-12,
        )
        .unwrap();
        assert!((out.diag["alpha_lower"] - 0.5).abs() < 1e-15);
        // theta_hat = 2 theta at eps = 1
        assert!((th.theta_hat(0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn helista_all_zero_thetas_is_affine() {
        let p = problem(5);
        let w = crate::dictgen::analytic_w(&p.a).unwrap().w;
        let x = DenseVector::zeros(p.n());
        let op = Operator::zero();
        let th = HelistaThetas { theta: [0.0; 4], eps: [1.0; 4] };
        let out = helista_step(
            &p,
            &x,
            &op,
            &ParamStore::new(),
            0,
            &w,
            [0.5, 1.0, 1.5, 0.5],
            &th,
            AlphaSpec::LowerPlus(0.0),
            1e-12,
        )
        .unwrap();
        assert_eq!(out.diag["alpha"], 1.0);
        assert_eq!(out.x_next.data, out.v_half.as_ref().unwrap().data);
    }
}
