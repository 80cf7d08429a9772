//! Sweep every solver over one instance, write the trace CSVs, and emit
//! an SVG of the recovery curves (the same machinery as the CLI).

use std::fs;

use ulz::classical::{admm_lasso_run, fista_run, ista_run, ClassicalConfig};
use ulz::cli::svg::{render, TraceCurve};
use ulz::cli::trace_to_csv;
use ulz::dictgen::{generate_problem, GenSpec};
use ulz::hybrid::{run, HybridConfig, Mode, Variant};
use ulz::neuralop::{ConvStackSpec, Operator};
use ulz::problem::SolverTrace;

fn main() -> ulz::Result<()> {
    let problem = generate_problem(&GenSpec {
        m: 50,
        n: 100,
        bernoulli_p: 0.1,
        condition_number: None,
        snr_db: None,
        seed: 9,
    })?;
    let k = 16;
    let out = std::env::temp_dir().join("ulz_sweep");
    fs::create_dir_all(&out)?;

    let mut traces: Vec<(String, SolverTrace)> = Vec::new();
    let ccfg = ClassicalConfig { lambda: 0.1, k, ..Default::default() };
    traces.push(("ista".into(), ista_run(&problem, &ccfg)?));
    traces.push(("fista".into(), fista_run(&problem, &ccfg)?));
    traces.push(("admm".into(), admm_lasso_run(&problem, &ccfg)?));

    let op = Operator::conv_residual(ConvStackSpec::default());
    for variant in [
        Variant::Hcista,
        Variant::HcistaF,
        Variant::HlistaCp,
        Variant::HlistaCpss,
        Variant::Halista,
        Variant::Hglista,
        Variant::Helista,
    ] {
        let cfg = HybridConfig {
            variant,
            k,
            c_lambda: 30.0,
            mode: Mode::Untrained,
            seed: 9,
            ..Default::default()
        };
        let (trace, _) = run(&problem, &cfg, &op)?;
        traces.push((variant.name().to_string(), trace));
    }

    let mut curves = Vec::new();
    for (name, trace) in &traces {
        fs::write(out.join(format!("{name}.csv")), trace_to_csv(trace))?;
        curves.push(TraceCurve {
            label: name.clone(),
            points: trace.nmse_db.iter().cloned().enumerate().collect(),
        });
        let note = if trace.nmse_db[k] > 0.0 { "  <- needs training" } else { "" };
        println!("{name:12} final NMSE {:7.2} dB{note}", trace.nmse_db[k]);
    }
    fs::write(out.join("sweep.svg"), render(&curves)?)?;
    println!("traces and sweep.svg written under {}", out.display());
    println!(
        "note: only the classical-parameter variant converges with untrained operators;\n\
         the learned-parameter family needs training or certified mode (see the\n\
         train_unrolled and certified_bounds examples)"
    );
    Ok(())
}
