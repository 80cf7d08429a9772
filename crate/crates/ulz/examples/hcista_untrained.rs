//! The classical-parameter hybrid solver with an untrained conv operator:
//! every parameter drawn inside its admissible range, monotone objective
//! descent by construction, and the contraction-ratio monitor recorded
//! each iteration.

use ulz::classical::{ista_run, ClassicalConfig};
use ulz::dictgen::{generate_problem, GenSpec};
use ulz::hybrid::{run, HybridConfig, Mode, Variant};
use ulz::neuralop::{ConvStackSpec, Operator};

fn main() -> ulz::Result<()> {
    let problem = generate_problem(&GenSpec {
        m: 50,
        n: 100,
        bernoulli_p: 0.1,
        condition_number: None,
        snr_db: None,
        seed: 1,
    })?;
    let cfg = HybridConfig {
        variant: Variant::Hcista,
        k: 600,
        lambda0: 0.1,
        c_lambda: 30.0,
        mode: Mode::Untrained,
        seed: 1,
        ..Default::default()
    };
    let op = Operator::conv_residual(ConvStackSpec::default());
    let (trace, _) = run(&problem, &cfg, &op)?;

    let rises = trace
        .objective
        .windows(2)
        .filter(|w| w[1] > w[0] + 1e-10)
        .count();
    println!("objective rose {rises} times out of {} steps", cfg.k);

    let ista = ista_run(&problem, &ClassicalConfig { lambda: 0.1, k: 600, ..Default::default() })?;
    println!("iter   hybrid-untrained   fixed-lambda ista   (NMSE dB)");
    for n in [0usize, 50, 150, 300, 600] {
        println!("{n:4}  {:12.2}  {:16.2}", trace.nmse_db[n], ista.nmse_db[n]);
    }

    let etas: Vec<f64> = (1..=16).filter_map(|n| trace.diag(n, "eta")).collect();
    println!(
        "eta over the first 16 iterations: min {:.3}, max {:.3}",
        etas.iter().cloned().fold(f64::INFINITY, f64::min),
        etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    Ok(())
}
