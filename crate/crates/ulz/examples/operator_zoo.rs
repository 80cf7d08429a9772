//! The three free-form operators a hybrid iteration can host, and what
//! the contraction-ratio monitor sees for each.

use ulz::autodiff::ParamStore;
use ulz::dictgen::{generate_problem, GenSpec};
use ulz::hybrid::{run_hcista_untrained, HybridConfig, Mode, Variant};
use ulz::neuralop::{ConvStackSpec, Operator};

fn main() -> ulz::Result<()> {
    let problem = generate_problem(&GenSpec {
        m: 40,
        n: 80,
        bernoulli_p: 0.12,
        condition_number: None,
        snr_db: None,
        seed: 5,
    })?;
    let cfg = HybridConfig {
        variant: Variant::Hcista,
        k: 16,
        c_lambda: 30.0,
        mode: Mode::Untrained,
        seed: 5,
        ..Default::default()
    };
    let spec = ConvStackSpec::default();
    println!("conv stack parameters (no bias): {}", spec.param_count());

    for (name, op) in [
        ("zero (shortcut only)", Operator::zero()),
        ("conv residual", Operator::conv_residual(spec.clone())),
        ("lipschitz difference", Operator::lipschitz_residual(spec.clone())),
    ] {
        let mut store = ParamStore::new();
        op.init_params(&mut store, cfg.k, cfg.seed ^ 0x5eed, false)?;
        let trace = run_hcista_untrained(&problem, &cfg, &op, &store)?;
        let etas: Vec<f64> = (1..=cfg.k).filter_map(|n| trace.diag(n, "eta")).collect();
        let max_eta = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        print!(
            "{name:22}  final NMSE {:7.2} dB   max eta {max_eta:.3}",
            trace.nmse_db[cfg.k]
        );
        if matches!(op.kind, ulz::neuralop::OperatorKind::LipschitzResidual) {
            let bound = spec.lipschitz_bound(&store, 0)? + 1.0;
            print!("   (guaranteed <= {bound:.3})");
        }
        println!();
    }
    Ok(())
}
