//! Classical Lasso baselines: ISTA, FISTA, and scaled-form ADMM.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, spectral_norm_sq, DenseVector};
use crate::problem::{ProblemInstance, SolverTrace};
use crate::thresh::soft_threshold;

/// Regularization schedule: a fixed lambda, or the adaptive rule
/// lambda_n = factor * min(lambda_{n-1}, c * ||x_n - x_{n-1}||).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSchedule {
    Fixed,
    Adaptive { c_lambda: f64, factor: f64 },
}

#[derive(Debug, Clone)]
pub struct ClassicalConfig {
    pub lambda: f64,
    /// Step size; defaults to 1/||A||_2^2 when absent.
    pub step: Option<f64>,
    pub k: usize,
    /// ADMM penalty.
    pub rho: f64,
    pub lambda_schedule: LambdaSchedule,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            step: None,
            k: 100,
            rho: 1.0,
            lambda_schedule: LambdaSchedule::Fixed,
        }
    }
}

impl ClassicalConfig {
    fn validate(&self, lip: f64) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Arg(format!("lambda {} < 0", self.lambda)));
        }
        if self.k == 0 {
            return Err(Error::Arg("K must be at least 1".into()));
        }
        if let Some(t) = self.step {
            if !(t > 0.0 && t <= 1.0 / lip + 1e-12) {
                return Err(Error::Arg(format!(
                    "step {t} outside (0, 1/||A||^2 = {}]",
                    1.0 / lip
                )));
            }
        }
        Ok(())
    }
}

const LAMBDA_FLOOR: f64 = 1e-300;

fn next_lambda(
    schedule: LambdaSchedule,
    prev: f64,
    x: &DenseVector,
    x_prev: &DenseVector,
) -> f64 {
    match schedule {
        LambdaSchedule::Fixed => prev,
        LambdaSchedule::Adaptive { c_lambda, factor } => {
            let step_norm = x.sub(x_prev).norm2();
            (factor * prev.min(c_lambda * step_norm)).max(LAMBDA_FLOOR)
        }
    }
}

/// Proximal gradient descent from x0 = 0.
pub fn ista_run(problem: &ProblemInstance, cfg: &ClassicalConfig) -> Result<SolverTrace> {
    let lip = spectral_norm_sq(&problem.a, 1e-12, 100_000)?;
    cfg.validate(lip)?;
    let t = cfg.step.unwrap_or(1.0 / lip);
    let mut trace = SolverTrace::with_capacity(cfg.k);
    let mut x = DenseVector::zeros(problem.n());
    let mut lambda = cfg.lambda;
    trace.push(problem, lambda, x.clone())?;
    for _ in 0..cfg.k {
        let grad = problem.a.matvec_t(&problem.a.matvec(&x)?.sub(&problem.b))?;
        let next = soft_threshold(&x.lincomb(1.0, &grad, -t), lambda * t)?;
        let new_lambda = next_lambda(cfg.lambda_schedule, lambda, &next, &x);
        x = next;
        lambda = new_lambda;
        let mut d = BTreeMap::new();
        d.insert("lambda".into(), lambda);
        trace.push_diagnostics(d);
        trace.push(problem, lambda, x.clone())?;
    }
    Ok(trace)
}

/// Accelerated proximal gradient with the usual momentum sequence
/// t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2.
pub fn fista_run(problem: &ProblemInstance, cfg: &ClassicalConfig) -> Result<SolverTrace> {
    let lip = spectral_norm_sq(&problem.a, 1e-12, 100_000)?;
    cfg.validate(lip)?;
    let step = cfg.step.unwrap_or(1.0 / lip);
    let mut trace = SolverTrace::with_capacity(cfg.k);
    let mut x = DenseVector::zeros(problem.n());
    let mut y = x.clone();
    let mut tk = 1.0f64;
    let mut lambda = cfg.lambda;
    trace.push(problem, lambda, x.clone())?;
    for _ in 0..cfg.k {
        let grad = problem.a.matvec_t(&problem.a.matvec(&y)?.sub(&problem.b))?;
        let next = soft_threshold(&y.lincomb(1.0, &grad, -step), lambda * step)?;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let beta = (tk - 1.0) / t_next;
        y = next.lincomb(1.0 + beta, &x, -beta);
        let new_lambda = next_lambda(cfg.lambda_schedule, lambda, &next, &x);
        x = next;
        tk = t_next;
        lambda = new_lambda;
        let mut d = BTreeMap::new();
        d.insert("lambda".into(), lambda);
        trace.push_diagnostics(d);
        trace.push(problem, lambda, x.clone())?;
    }
    Ok(trace)
}

/// Scaled-form ADMM. The x-update solves (A'A + rho I) x = A'b + rho(z - u)
/// through a Cholesky factorization cached across iterations; the trace
/// records the sparse iterate z.
pub fn admm_lasso_run(problem: &ProblemInstance, cfg: &ClassicalConfig) -> Result<SolverTrace> {
    if cfg.lambda < 0.0 || cfg.k == 0 {
        return Err(Error::Arg("admm: bad lambda or K".into()));
    }
    if !(cfg.rho > 0.0) {
        return Err(Error::Arg(format!("admm: rho {} must be positive", cfg.rho)));
    }
    let n = problem.n();
    let at = problem.a.transpose();
    let mut normal = at.gram_rows(); // A'A
    for i in 0..n {
        normal.set(i, i, normal.get(i, i) + cfg.rho);
    }
    let l = cholesky(&normal)
        .map_err(|e| Error::Numeric(format!("admm factorization failed: {e}")))?;
    let atb = problem.a.matvec_t(&problem.b)?;

    let mut trace = SolverTrace::with_capacity(cfg.k);
    let mut z = DenseVector::zeros(n);
    let mut u = DenseVector::zeros(n);
    trace.push(problem, cfg.lambda, z.clone())?;
    for _ in 0..cfg.k {
        let rhs = atb.lincomb(1.0, &z.sub(&u), cfg.rho);
        let x = cholesky_solve(&l, &rhs);
        z = soft_threshold(&x.add(&u), cfg.lambda / cfg.rho)?;
        let r = x.sub(&z);
        u = u.add(&r);
        let mut d = BTreeMap::new();
        d.insert("primal_residual".into(), r.norm2());
        trace.push_diagnostics(d);
        trace.push(problem, cfg.lambda, z.clone())?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictgen::{generate_problem, GenSpec};
    use crate::linalg::DenseMatrix;
    use crate::metrics::eval_objective;
    use crate::problem::ProblemInstance;

    fn scalar_problem() -> ProblemInstance {
        // A = [1], b = [1]; with lambda = 0.5 the optimum is x = 0.5
        ProblemInstance::new(
            DenseMatrix::identity(1),
            DenseVector::new(vec![1.0]),
            DenseVector::new(vec![1.0]),
            None,
            0,
        )
        .unwrap()
    }

    fn small_problem(seed: u64) -> ProblemInstance {
        generate_problem(&GenSpec {
            m: 20,
            n: 40,
            bernoulli_p: 0.08,
            condition_number: None,
            snr_db: None,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn ista_scalar_fixed_point() {
        let p = scalar_problem();
        let cfg = ClassicalConfig { lambda: 0.5, step: Some(1.0), k: 3, ..Default::default() };
        let trace = ista_run(&p, &cfg).unwrap();
        assert!((trace.iterates[1].data[0] - 0.5).abs() < 1e-15);
        assert!((trace.iterates[3].data[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ista_objective_nonincreasing() {
        let p = small_problem(3);
        let cfg = ClassicalConfig { lambda: 0.1, k: 300, ..Default::default() };
        let trace = ista_run(&p, &cfg).unwrap();
        for w in trace.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn ista_lambda_zero_reaches_least_squares() {
        // overdetermined toy embedded in a square system
        let a = DenseMatrix::from_vec(2, 2, vec![1.0, 0.3, 0.0, 0.9]).unwrap();
        let xs = DenseVector::new(vec![0.7, -0.4]);
        let b = a.matvec(&xs).unwrap();
        let p = ProblemInstance::new(a.clone(), b.clone(), xs, None, 0).unwrap();
        let cfg = ClassicalConfig { lambda: 0.0, k: 4000, ..Default::default() };
        let trace = ista_run(&p, &cfg).unwrap();
        // normal equations oracle
        let at = a.transpose();
        let gram = at.gram_rows();
        let l = cholesky(&gram).unwrap();
        let lsq = cholesky_solve(&l, &a.matvec_t(&b).unwrap());
        let err = trace.last().unwrap().sub(&lsq).norm2();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn fista_scalar_fixed_point_and_dominance() {
        let p = scalar_problem();
        let cfg = ClassicalConfig { lambda: 0.5, step: Some(1.0), k: 10, ..Default::default() };
        let trace = fista_run(&p, &cfg).unwrap();
        assert!((trace.last().unwrap().data[0] - 0.5).abs() < 1e-9);

        // acceleration should not lose to ISTA at K=100 on random instances
        for seed in 0..20 {
            let p = small_problem(seed);
            let cfg = ClassicalConfig { lambda: 0.1, k: 100, ..Default::default() };
            let fi = fista_run(&p, &cfg).unwrap();
            let is = ista_run(&p, &cfg).unwrap();
            let f_f = *fi.objective.last().unwrap();
            let f_i = *is.objective.last().unwrap();
            assert!(f_f <= f_i + 1e-9, "seed {seed}: fista {f_f} vs ista {f_i}");
        }
    }

    #[test]
    fn fista_quadratic_rate_slope() {
        // lambda = 0 on an ill-conditioned quadratic: the accelerated
        // method sits in its O(1/k^2) regime long before the linear tail
        // kicks in, so the monotone envelope of the objective gap should
        // fit a log-log slope near -2.
        let raw = crate::dictgen::generate_dictionary(&GenSpec {
            m: 30,
            n: 30,
            bernoulli_p: 1.0,
            condition_number: None,
            snr_db: None,
            seed: 11,
        })
        .unwrap();
        let a = crate::dictgen::rewrite_spectrum(&raw, 1e6).unwrap();
        let mut g = crate::rng::SplitMix64::stream(11, crate::rng::stream::SIGNAL);
        let xs = DenseVector::new((0..30).map(|_| g.next_gaussian()).collect());
        let b = a.matvec(&xs).unwrap();
        let p = ProblemInstance::new(a, b, xs, None, 11).unwrap();
        let cfg = ClassicalConfig { lambda: 0.0, k: 600, ..Default::default() };
        let trace = fista_run(&p, &cfg).unwrap();
        let fstar = trace.objective.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut envelope = f64::INFINITY;
        let pts: Vec<(f64, f64)> = (10..400)
            .filter_map(|k| {
                envelope = envelope.min(trace.objective[k] - fstar);
                (envelope > 1e-13).then(|| ((k as f64).ln(), envelope.ln()))
            })
            .collect();
        let n = pts.len() as f64;
        let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
        let (mx, my) = (sx / n, sy / n);
        let slope: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum::<f64>();
        assert!(
            (slope + 2.0).abs() <= 0.3,
            "log-log slope {slope} not within 0.3 of -2"
        );
    }

    #[test]
    fn admm_scalar_and_least_squares() {
        let p = scalar_problem();
        let cfg = ClassicalConfig { lambda: 0.5, k: 200, rho: 1.0, ..Default::default() };
        let trace = admm_lasso_run(&p, &cfg).unwrap();
        assert!(
            (trace.last().unwrap().data[0] - 0.5).abs() < 1e-8,
            "{}",
            trace.last().unwrap().data[0]
        );

        let a = DenseMatrix::from_vec(2, 2, vec![1.0, 0.3, 0.0, 0.9]).unwrap();
        let xs = DenseVector::new(vec![0.7, -0.4]);
        let b = a.matvec(&xs).unwrap();
        let p = ProblemInstance::new(a.clone(), b.clone(), xs, None, 0).unwrap();
        let cfg = ClassicalConfig { lambda: 0.0, k: 2000, rho: 1.0, ..Default::default() };
        let trace = admm_lasso_run(&p, &cfg).unwrap();
        let at = a.transpose();
        let l = cholesky(&at.gram_rows()).unwrap();
        let lsq = cholesky_solve(&l, &a.matvec_t(&b).unwrap());
        assert!(trace.last().unwrap().sub(&lsq).norm2() < 1e-6);
    }

    #[test]
    fn admm_primal_residual_trend() {
        let p = small_problem(5);
        let cfg = ClassicalConfig { lambda: 0.05, k: 400, rho: 1.0, ..Default::default() };
        let trace = admm_lasso_run(&p, &cfg).unwrap();
        let res: Vec<f64> = (1..=400)
            .map(|n| trace.diag(n, "primal_residual").unwrap())
            .collect();
        // monotone trendline, allowing a 5% share of transient violations
        let violations = res.windows(2).filter(|w| w[1] > w[0] * 1.02 + 1e-14).count();
        assert!(
            violations <= 20,
            "{violations} increases out of {}",
            res.len() - 1
        );
        assert!(res[399] < res[0]);
    }

    #[test]
    fn objective_consistent_with_metrics_helper() {
        let p = small_problem(8);
        let cfg = ClassicalConfig { lambda: 0.1, k: 5, ..Default::default() };
        let trace = ista_run(&p, &cfg).unwrap();
        let f = eval_objective(&p.a, &p.b, &trace.iterates[5], trace.diag(5, "lambda").unwrap())
            .unwrap();
        assert!((f - trace.objective[5]).abs() < 1e-12);
    }
}
