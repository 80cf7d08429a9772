//! Stage-wise training of an unrolled coupled-weight model at desk
//! scale: record the K-iteration forward pass on the autodiff tape,
//! train with Adam, and compare recovery before and after.

use ulz::classical::{ista_run, ClassicalConfig};
use ulz::dictgen::GenSpec;
use ulz::hybrid::{init_store, HybridConfig, Mode, Variant};
use ulz::neuralop::{ConvStackSpec, Operator};
use ulz::train::{
    count_parameters, stagewise_train, validation_nmse_db, ProblemSampler, StageSpec,
    TrainConfig,
};

fn main() -> ulz::Result<()> {
    let k = 6;
    let sampler = ProblemSampler::from_spec(&GenSpec {
        m: 48,
        n: 96,
        bernoulli_p: 0.1,
        condition_number: None,
        snr_db: None,
        seed: 21,
    })?;
    let cfg = HybridConfig {
        variant: Variant::HlistaCp,
        k,
        lambda0: 0.1,
        mode: Mode::Untrained,
        seed: 21,
        ..Default::default()
    };
    let op = Operator::conv_residual(ConvStackSpec::default());
    let template = sampler.instance(0)?;
    let store = init_store(&template, &cfg, &op)?;
    println!("model has {} trainable scalars", count_parameters(&store));

    let test = 1000..1050u64;
    let before = validation_nmse_db(&sampler, test.clone(), &cfg, &op, &store)?;

    let mut stages = Vec::new();
    for s in 1..=k {
        stages.push(StageSpec { unfreeze_upto: s, newest_only: true, lr: 5e-3, steps: 16 });
        stages.push(StageSpec { unfreeze_upto: s, newest_only: false, lr: 1e-3, steps: 10 });
    }
    let tc = TrainConfig {
        stages,
        batch_size: 16,
        train_size: 800,
        val_size: 50,
        seed: 21,
        jobs: 2,
    };
    let (trained, log) = stagewise_train(&sampler, &cfg, &op, &tc, store)?;
    let after = validation_nmse_db(&sampler, test.clone(), &cfg, &op, &trained)?;

    let mut num = 0.0;
    let mut den = 0.0;
    for i in test {
        let p = sampler.instance(i)?;
        let t = ista_run(&p, &ClassicalConfig { lambda: 0.1, k, ..Default::default() })?;
        num += t.last().unwrap().sub(&p.x_star).norm2_sq();
        den += p.x_star.norm2_sq();
    }
    println!("test NMSE at {k} iterations:");
    println!("  ista(0.1)         {:.2} dB", 10.0 * (num / den).log10());
    println!("  hybrid untrained  {before:.2} dB");
    println!("  hybrid trained    {after:.2} dB   ({} optimizer steps)", log.len());

    let ckpt = std::env::temp_dir().join("ulz_example_model.ulp");
    trained.save(&ckpt)?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}
