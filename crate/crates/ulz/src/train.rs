//! Stage-wise training of unrolled hybrid models on sampled batches.

use std::collections::BTreeMap;

use crate::autodiff::{adam_step, AdamConfig, Constraint, ParamStore, Tape};
use crate::dictgen::{generate_dictionary, sample_signal, GenSpec};
use crate::error::{Error, Result};
use crate::hybrid::unrolled::{mse_loss, record_model};
use crate::hybrid::{init_store, run_with_store, HybridConfig};
use crate::linalg::{spectral_norm_sq, DenseMatrix};
use crate::neuralop::Operator;
use crate::problem::ProblemInstance;
use crate::rng::{stream, SplitMix64};

/// One stage of the schedule: which unrolled layers are free and at what
/// learning rate.
#[derive(Debug, Clone, Copy)]
pub struct StageSpec {
    /// Layer-indexed parameters with index < `unfreeze_upto` train; shared
    /// parameters (weights, kernels) train in every stage.
    pub unfreeze_upto: usize,
    /// Only the newest layer trains when set; otherwise all unfrozen do.
    pub newest_only: bool,
    pub lr: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stages: Vec<StageSpec>,
    pub batch_size: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub seed: u64,
    /// Worker threads for the batch fan-out; reduction order is fixed, so
    /// results do not depend on this.
    pub jobs: usize,
}

impl TrainConfig {
    /// The default schedule: for each layer s, train layer s alone at
    /// `lr`, then everything up to s at lr/5 and lr/50. The shape follows
    /// the usual stage-wise recipe for unrolled models; the exact
    /// schedule is configurable because no canonical one is published.
    pub fn default_schedule(k: usize, lr: f64, steps: usize) -> Vec<StageSpec> {
        let mut stages = Vec::with_capacity(3 * k);
        for s in 1..=k {
            stages.push(StageSpec { unfreeze_upto: s, newest_only: true, lr, steps });
            stages.push(StageSpec {
                unfreeze_upto: s,
                newest_only: false,
                lr: lr * 0.2,
                steps,
            });
            stages.push(StageSpec {
                unfreeze_upto: s,
                newest_only: false,
                lr: lr * 0.02,
                steps,
            });
        }
        stages
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stages: TrainConfig::default_schedule(8, 2e-3, 30),
            batch_size: 32,
            train_size: 2000,
            val_size: 200,
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub stage: usize,
    pub step: usize,
    pub train_loss: f64,
    /// NaN except on the closing step of a stage.
    pub val_nmse_db: f64,
    pub lr: f64,
}

/// Layer index of a parameter name like "theta1.7"; shared parameters
/// return None.
fn layer_index(name: &str) -> Option<usize> {
    name.rsplit_once('.').and_then(|(_, idx)| idx.parse().ok())
}

fn unfrozen(name: &str, stage: &StageSpec) -> bool {
    match layer_index(name) {
        None => true,
        Some(i) => {
            if stage.newest_only {
                i + 1 == stage.unfreeze_upto
            } else {
                i < stage.unfreeze_upto
            }
        }
    }
}

/// Problem sampler sharing one dictionary: signals are drawn per index
/// from split substreams, measurements are noiseless.
pub struct ProblemSampler {
    pub a: DenseMatrix,
    pub bernoulli_p: f64,
    pub seed: u64,
}

impl ProblemSampler {
    pub fn from_spec(spec: &GenSpec) -> Result<Self> {
        Ok(Self {
            a: generate_dictionary(spec)?,
            bernoulli_p: spec.bernoulli_p,
            seed: spec.seed,
        })
    }

    pub fn instance(&self, index: u64) -> Result<ProblemInstance> {
        let sub = SplitMix64::substream(self.seed, stream::TRAIN, index).next_u64();
        let (x_star, _) = sample_signal(self.a.cols, self.bernoulli_p, sub)?;
        let b = self.a.matvec(&x_star)?;
        ProblemInstance::new(self.a.clone(), b, x_star, None, sub)
    }
}

fn batch_gradients(
    problems: &[ProblemInstance],
    cfg: &HybridConfig,
    op: &Operator,
    store: &ParamStore,
    lip: f64,
    jobs: usize,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let one = |p: &ProblemInstance| -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let mut tape = Tape::new();
        let rec = record_model(&mut tape, p, cfg, op, store, lip)?;
        let loss = mse_loss(&mut tape, rec.x_k, &p.x_star)?;
        let lval = tape.scalar_value(loss);
        let adj = tape.backward(loss)?;
        let grads = rec
            .param_nodes
            .iter()
            .map(|(name, node)| (name.clone(), adj[node.0].clone()))
            .collect();
        Ok((lval, grads))
    };

    let per_sample: Vec<Result<(f64, BTreeMap<String, Vec<f64>>)>> = if jobs <= 1 {
        problems.iter().map(one).collect()
    } else {
        std::thread::scope(|scope| {
            let chunks: Vec<_> = problems.chunks(problems.len().div_ceil(jobs)).collect();
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| scope.spawn(move || chunk.iter().map(one).collect::<Vec<_>>()))
                .collect();
            // fixed-order reduction: results concatenate in chunk order
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    };

    let scale = 1.0 / problems.len() as f64;
    let mut loss_total = 0.0;
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in per_sample {
        let (l, grads) = r?;
        loss_total += l * scale;
        for (name, g) in grads {
            let slot = acc.entry(name).or_insert_with(|| vec![0.0; g.len()]);
            for (s, gi) in slot.iter_mut().zip(&g) {
                *s += gi * scale;
            }
        }
    }
    Ok((loss_total, acc))
}

/// Mean recovery NMSE of the current parameters over a validation set.
pub fn validation_nmse_db(
    sampler: &ProblemSampler,
    offsets: std::ops::Range<u64>,
    cfg: &HybridConfig,
    op: &Operator,
    store: &ParamStore,
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in offsets {
        let p = sampler.instance(i)?;
        let trace = run_with_store(&p, cfg, op, store)?;
        let x = trace.last().unwrap();
        num += x.sub(&p.x_star).norm2_sq();
        den += p.x_star.norm2_sq();
    }
    Ok(10.0 * (num / den).log10())
}

/// Stage-wise training. Samples indices [0, train_size) for batches and
/// [train_size, train_size + val_size) for validation.
pub fn stagewise_train(
    sampler: &ProblemSampler,
    hybrid_cfg: &HybridConfig,
    op: &Operator,
    cfg: &TrainConfig,
    mut store: ParamStore,
) -> Result<(ParamStore, Vec<TrainLogRow>)> {
    let lip = spectral_norm_sq(&sampler.a, 1e-12, 100_000)?;
    let mut log = Vec::new();
    let mut draw = SplitMix64::stream(cfg.seed, stream::TRAIN);
    let val_range = cfg.train_size as u64..(cfg.train_size + cfg.val_size) as u64;

    for (si, stage) in cfg.stages.iter().enumerate() {
        // a shortened unroll trains the prefix the stage has opened
        let mut stage_cfg = hybrid_cfg.clone();
        stage_cfg.k = stage.unfreeze_upto.min(hybrid_cfg.k);
        let adam = AdamConfig { lr: stage.lr, ..AdamConfig::default() };
        for step in 0..stage.steps {
            let batch: Vec<ProblemInstance> = (0..cfg.batch_size)
                .map(|_| sampler.instance(draw.next_u64() % cfg.train_size as u64))
                .collect::<Result<_>>()?;
            let (loss, grads) =
                batch_gradients(&batch, &stage_cfg, op, &store, lip, cfg.jobs)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss diverged at stage {si} step {step}"
                )));
            }
            let filtered: BTreeMap<String, Vec<f64>> = grads
                .into_iter()
                .filter(|(name, _)| unfrozen(name, stage))
                .collect();
            adam_step(&mut store, &filtered, &adam)?;
            let val = if step + 1 == stage.steps {
                validation_nmse_db(sampler, val_range.clone(), hybrid_cfg, op, &store)?
            } else {
                f64::NAN
            };
            log.push(TrainLogRow {
                stage: si,
                step,
                train_loss: loss,
                val_nmse_db: val,
                lr: stage.lr,
            });
        }
    }
    Ok((store, log))
}

/// Number of trainable scalars by direct enumeration.
pub fn count_parameters(store: &ParamStore) -> usize {
    store.trainable_count()
}

/// The parameter layout of the analytic-weight baseline (a step scale and
/// a threshold per iteration); exists for the parameter-count table.
pub fn alista_form_store(k: usize) -> ParamStore {
    let mut s = ParamStore::new();
    for n in 0..k {
        s.add_scalar(&format!("theta.{n}"), 0.01, Constraint::Positive, true)
            .unwrap();
        s.add_scalar(&format!("gamma.{n}"), 1.0, Constraint::Free, true)
            .unwrap();
    }
    s
}

/// Convenience: configured store for a variant at the published desk
/// scale, for the parameter-count table.
pub fn variant_store_for_count(
    variant: crate::hybrid::Variant,
    k: usize,
    m: usize,
    n: usize,
    op: &Operator,
) -> Result<ParamStore> {
    let spec = GenSpec {
        m,
        n,
        bernoulli_p: 0.1,
        condition_number: None,
        snr_db: None,
        seed: 1,
    };
    let problem = crate::dictgen::generate_problem(&spec)?;
    let cfg = HybridConfig { variant, k, ..Default::default() };
    init_store(&problem, &cfg, op)
}
