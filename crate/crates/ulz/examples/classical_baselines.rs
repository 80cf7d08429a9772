//! Run the three classical Lasso baselines on one instance and print
//! their recovery curves side by side.

use ulz::classical::{admm_lasso_run, fista_run, ista_run, ClassicalConfig, LambdaSchedule};
use ulz::dictgen::{generate_problem, GenSpec};

fn main() -> ulz::Result<()> {
    let problem = generate_problem(&GenSpec {
        m: 50,
        n: 100,
        bernoulli_p: 0.1,
        condition_number: None,
        snr_db: None,
        seed: 3,
    })?;

    let k = 200;
    let cfg = ClassicalConfig { lambda: 0.1, k, ..Default::default() };
    let ista = ista_run(&problem, &cfg)?;
    let fista = fista_run(&problem, &cfg)?;
    let admm = admm_lasso_run(&problem, &cfg)?;
    let adaptive = ista_run(
        &problem,
        &ClassicalConfig {
            lambda_schedule: LambdaSchedule::Adaptive { c_lambda: 30.0, factor: 0.999 },
            ..cfg.clone()
        },
    )?;

    println!("iter   ista      fista     admm      ista-adaptive   (NMSE dB)");
    for n in [0usize, 5, 10, 25, 50, 100, 200] {
        println!(
            "{n:4}  {:8.2}  {:8.2}  {:8.2}  {:8.2}",
            ista.nmse_db[n], fista.nmse_db[n], admm.nmse_db[n], adaptive.nmse_db[n]
        );
    }
    println!(
        "final objectives: ista {:.6}, fista {:.6}, admm {:.6}",
        ista.objective[k], fista.objective[k], admm.objective[k]
    );
    Ok(())
}
