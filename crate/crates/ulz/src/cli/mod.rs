//! Experiment front-end: generate problem suites, run solvers, train
//! unrolled models, and plot convergence curves.
//!
//! Flags are plain `--key value` pairs; a `--config FILE` of line-oriented
//! `key = value` entries supplies defaults and explicit flags win. Unknown
//! keys are rejected. The env var `ULZ_SEED` overrides the default seed
//! when no `--seed` is given.

pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bundle;
use crate::classical::{admm_lasso_run, fista_run, ista_run, ClassicalConfig, LambdaSchedule};
use crate::dictgen::{achieved_condition_number, GenSpec};
use crate::error::{Error, Result};
use crate::hybrid::{self, HybridConfig, Mode, Variant};
use crate::neuralop::{ConvStackSpec, Operator};
use crate::problem::{ProblemInstance, SolverTrace};
use crate::train::{
    count_parameters, stagewise_train, ProblemSampler, StageSpec, TrainConfig,
};

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Dim(_) | Error::Arg(_) | Error::Constraint(_) | Error::Parse(_)
        | Error::Numeric(_) => 2,
        Error::Io(_) => 3,
        Error::Infeasible(_) => 4,
        Error::Training(_) => 5,
        Error::Empty(_) => 6,
    }
}

/// Entry point for the thin binary.
pub fn run_from_env() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ulz: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(args: &[String]) -> Result<()> {
    let Some(cmd) = args.first() else {
        return Err(Error::Arg(usage().into()));
    };
    let rest = &args[1..];
    match cmd.as_str() {
        "generate" => cmd_generate(rest),
        "run" => cmd_run(rest),
        "train" => cmd_train(rest),
        "plot" => cmd_plot(rest),
        "count-params" => cmd_count_params(rest),
        "--help" | "help" | "-h" => {
            println!("{}", usage());
            Ok(())
        }
        other => Err(Error::Arg(format!("unknown command {other}\n{}", usage()))),
    }
}

fn usage() -> &'static str {
    "usage: ulz <command> [--flags]\n\
     commands:\n\
     \x20 generate --m M --n N --p P --seed S [--snr-db X] [--kappa K] [--count C] [--offset I] --out DIR\n\
     \x20 run --problems DIR --solver NAME --k K --out DIR [--mode untrained|certified|checkpoint]\n\
     \x20      [--checkpoint FILE] [--lambda X] [--lambda0 X] [--adaptive-lambda true]\n\
     \x20      [--c-lambda X] [--rho X] [--p X] [--p-max X] [--gamma1 X] [--operator conv|zero|lipschitz]\n\
     \x20      [--seed S] [--jobs N] [--config FILE]\n\
     \x20 train --solver NAME --k K --m M --n N --p P --train-size N --val-size N --out DIR\n\
     \x20      [--stages-file F] [--batch-size N] [--lr X] [--steps N] [--seed S] [--jobs N]\n\
     \x20 plot --out FILE.svg TRACE.csv [TRACE.csv ...]\n\
     \x20 count-params --solver NAME --k K --m M --n N\n\
     solvers: ista fista admm hcista hcista-f hlista-cp hlista-cpss halista hglista helista"
}

struct Args {
    flags: BTreeMap<String, String>,
    positional: Vec<String>,
}

fn parse_args(argv: &[String], allowed: &[&str]) -> Result<Args> {
    let mut flags = BTreeMap::new();
    let mut positional = Vec::new();
    let mut it = argv.iter().peekable();
    while let Some(a) = it.next() {
        if let Some(key) = a.strip_prefix("--") {
            if !allowed.contains(&key) {
                return Err(Error::Arg(format!("unknown flag --{key}")));
            }
            let val = it
                .next()
                .ok_or_else(|| Error::Arg(format!("flag --{key} needs a value")))?;
            flags.insert(key.to_string(), val.clone());
        } else {
            positional.push(a.clone());
        }
    }
    // config file supplies defaults; explicit flags win
    if let Some(path) = flags.get("config").cloned() {
        let text = fs::read_to_string(&path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse(format!("{path}:{}: expected key = value", lineno + 1)));
            };
            let k = k.trim();
            if !allowed.contains(&k) {
                return Err(Error::Parse(format!("{path}:{}: unknown key {k}", lineno + 1)));
            }
            flags.entry(k.to_string()).or_insert_with(|| v.trim().to_string());
        }
    }
    Ok(Args { flags, positional })
}

impl Args {
    fn get(&self, key: &str) -> Option<&str> {
        self.flags.get(key).map(|s| s.as_str())
    }

    fn need(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Arg(format!("missing required flag --{key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Arg(format!("flag --{key}: bad value {v}"))),
        }
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn need_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.need(key)?
            .parse()
            .map_err(|_| Error::Arg(format!("flag --{key}: bad value")))
    }

    fn seed(&self) -> Result<u64> {
        if let Some(s) = self.parse::<u64>("seed")? {
            return Ok(s);
        }
        if let Ok(env) = std::env::var("ULZ_SEED") {
            return env
                .parse()
                .map_err(|_| Error::Arg(format!("ULZ_SEED: bad value {env}")));
        }
        Ok(0)
    }
}

fn cmd_generate(argv: &[String]) -> Result<()> {
    let args = parse_args(
        argv,
        &["m", "n", "p", "seed", "snr-db", "kappa", "count", "offset", "out", "config"],
    )?;
    let m = args.need_parse::<usize>("m")?;
    let n = args.need_parse::<usize>("n")?;
    let p = args.need_parse::<f64>("p")?;
    let seed = args.seed()?;
    let snr_db = args.parse::<f64>("snr-db")?;
    let kappa = args.parse::<f64>("kappa")?;
    let count = args.parse_or::<usize>("count", 1)?;
    let offset = args.parse_or::<u64>("offset", 0)?;
    let out = PathBuf::from(args.need("out")?);
    fs::create_dir_all(&out)?;

    // one dictionary shared by every instance, signals varying per index;
    // the derivation matches the training sampler, so `train --seed S`
    // and `generate --seed S` see the same distribution (use --offset
    // past train-size + val-size for held-out instances)
    let spec = GenSpec { m, n, bernoulli_p: p, condition_number: kappa, snr_db, seed };
    let sampler = ProblemSampler::from_spec(&spec)?;
    let achieved = if kappa.is_some() {
        Some(achieved_condition_number(&sampler.a)?)
    } else {
        None
    };
    let mut manifest = String::from("dir,seed,M,N,snr_db,kappa\n");
    for i in 0..count {
        let mut problem = sampler.instance(offset + i as u64)?;
        if let Some(snr) = snr_db {
            let noisy = crate::dictgen::add_noise(&problem.b, snr, problem.seed)?;
            problem =
                ProblemInstance::new(problem.a, noisy, problem.x_star, Some(snr), problem.seed)?;
        }
        let dir = out.join(format!("inst{i:04}"));
        let inst_seed = problem.seed;
        bundle::write_bundle(&dir, &problem, achieved)?;
        manifest.push_str(&format!(
            "inst{i:04},{inst_seed},{m},{n},{},{}\n",
            snr_db.map(|v| v.to_string()).unwrap_or_default(),
            achieved.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    fs::write(out.join("manifest.csv"), manifest)?;
    Ok(())
}

fn collect_bundles(dir: &Path) -> Result<Vec<PathBuf>> {
    if bundle::is_bundle(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && bundle::is_bundle(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Arg(format!("{}: no problem bundles found", dir.display())));
    }
    Ok(dirs)
}

const TRACE_HEADER: &str =
    "n,nmse_db,objective,true_frac,false_frac,alpha,theta1,theta2,eta,bound";

fn fmt_db(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Serialize a trace to the stable CSV schema; K+1 rows plus the header.
pub fn trace_to_csv(trace: &SolverTrace) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for i in 0..trace.len() {
        let d = |key: &str| -> Option<f64> {
            if i == 0 {
                None
            } else {
                trace.diag(i, key)
            }
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            i,
            fmt_db(trace.nmse_db[i]),
            trace.objective[i],
            trace.support_true_frac[i],
            trace.support_false_frac[i],
            fmt_opt(d("alpha")),
            fmt_opt(d("theta1")),
            fmt_opt(d("theta2")),
            fmt_opt(d("eta")),
            fmt_opt(d("bound")),
        ));
    }
    s
}

#[derive(Clone)]
enum Solver {
    Classical(&'static str, ClassicalConfig),
    Hybrid(HybridConfig, Operator),
}

fn build_solver(args: &Args) -> Result<(String, Solver)> {
    let name = args.need("solver")?.to_string();
    let k = args.need_parse::<usize>("k")?;
    let seed = args.seed()?;
    match name.as_str() {
        "ista" | "fista" | "admm" => {
            let lambda = args.parse_or::<f64>("lambda", 0.1)?;
            let schedule = if args.get("adaptive-lambda") == Some("true") {
                LambdaSchedule::Adaptive {
                    c_lambda: args.parse_or::<f64>("c-lambda", 1.0)?,
                    factor: args.parse_or::<f64>("lambda-factor", 0.999)?,
                }
            } else {
                LambdaSchedule::Fixed
            };
            let cfg = ClassicalConfig {
                lambda,
                step: args.parse::<f64>("step")?,
                k,
                rho: args.parse_or::<f64>("rho", 1.0)?,
                lambda_schedule: schedule,
            };
            let tag: &'static str = match name.as_str() {
                "ista" => "ista",
                "fista" => "fista",
                _ => "admm",
            };
            Ok((name, Solver::Classical(tag, cfg)))
        }
        _ => {
            let variant = Variant::parse(&name)?;
            let mode = match args.get("mode").unwrap_or("untrained") {
                "untrained" => Mode::Untrained,
                "certified" => Mode::Certified,
                "checkpoint" => {
                    Mode::Checkpoint(PathBuf::from(args.need("checkpoint")?))
                }
                other => return Err(Error::Arg(format!("unknown mode {other}"))),
            };
            let cfg = HybridConfig {
                variant,
                k,
                lambda0: args.parse_or::<f64>("lambda0", 0.1)?,
                c_lambda: args.parse_or::<f64>("c-lambda", 1.0)?,
                lambda_factor: args.parse_or::<f64>("lambda-factor", 0.999)?,
                p: args.parse_or::<f64>("p", 0.7)?,
                p_max: args.parse_or::<f64>("p-max", 13.0)?,
                gamma1: args.parse_or::<f64>("gamma1", 1.0)?,
                mode,
                seed,
                ..Default::default()
            };
            let mut spec = ConvStackSpec::default();
            if args.get("untied") == Some("true") {
                spec.tied = false;
            }
            let op = match args.get("operator").unwrap_or("conv") {
                "conv" => Operator::conv_residual(spec),
                "zero" => Operator::zero(),
                "lipschitz" => Operator::lipschitz_residual(spec),
                other => return Err(Error::Arg(format!("unknown operator {other}"))),
            };
            Ok((name, Solver::Hybrid(cfg, op)))
        }
    }
}

fn run_one(problem: &ProblemInstance, solver: &Solver) -> Result<SolverTrace> {
    match solver {
        Solver::Classical(tag, cfg) => match *tag {
            "ista" => ista_run(problem, cfg),
            "fista" => fista_run(problem, cfg),
            _ => admm_lasso_run(problem, cfg),
        },
        Solver::Hybrid(cfg, op) => {
            let (trace, _) = hybrid::run(problem, cfg, op)?;
            Ok(trace)
        }
    }
}

fn cmd_run(argv: &[String]) -> Result<()> {
    let args = parse_args(
        argv,
        &[
            "problems", "solver", "mode", "checkpoint", "k", "lambda", "lambda0",
            "adaptive-lambda", "c-lambda", "lambda-factor", "step", "rho", "p", "p-max",
            "gamma1", "operator", "untied", "seed", "jobs", "out", "config",
        ],
    )?;
    let (name, solver) = build_solver(&args)?;
    let problems_dir = PathBuf::from(args.need("problems")?);
    let out = PathBuf::from(args.need("out")?);
    fs::create_dir_all(&out)?;
    let bundles = collect_bundles(&problems_dir)?;
    let jobs = args.parse_or::<usize>("jobs", 1)?.max(1);

    let work = |dir: &PathBuf| -> Result<()> {
        let problem = bundle::read_bundle(dir)?;
        let trace = run_one(&problem, &solver)?;
        let stem = dir.file_name().unwrap_or_default().to_string_lossy();
        let path = out.join(format!("{name}.{stem}.csv"));
        fs::write(path, trace_to_csv(&trace))?;
        Ok(())
    };

    if jobs <= 1 || bundles.len() <= 1 {
        for dir in &bundles {
            work(dir)?;
        }
    } else {
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let chunks: Vec<_> = bundles.chunks(bundles.len().div_ceil(jobs)).collect();
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| scope.spawn(move || chunk.iter().map(work).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for r in results {
            r?;
        }
    }
    Ok(())
}

fn parse_stages_file(path: &str) -> Result<Vec<StageSpec>> {
    let text = fs::read_to_string(path)?;
    let mut stages = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if parts.len() != 4 {
            return Err(Error::Parse(format!(
                "{path}:{}: expected unfreeze_upto,newest_only,lr,steps",
                lineno + 1
            )));
        }
        stages.push(StageSpec {
            unfreeze_upto: parts[0]
                .parse()
                .map_err(|_| Error::Parse(format!("{path}:{}: bad layer index", lineno + 1)))?,
            newest_only: parts[1] == "1" || parts[1] == "true",
            lr: parts[2]
                .parse()
                .map_err(|_| Error::Parse(format!("{path}:{}: bad lr", lineno + 1)))?,
            steps: parts[3]
                .parse()
                .map_err(|_| Error::Parse(format!("{path}:{}: bad step count", lineno + 1)))?,
        });
    }
    Ok(stages)
}

fn cmd_train(argv: &[String]) -> Result<()> {
    let args = parse_args(
        argv,
        &[
            "solver", "k", "m", "n", "p", "train-size", "val-size", "batch-size",
            "stages-file", "lr", "steps", "seed", "jobs", "out", "lambda0", "operator",
            "config",
        ],
    )?;
    let name = args.need("solver")?.to_string();
    let variant = Variant::parse(&name)?;
    let k = args.need_parse::<usize>("k")?;
    let seed = args.seed()?;
    let sampler = ProblemSampler::from_spec(&GenSpec {
        m: args.need_parse::<usize>("m")?,
        n: args.need_parse::<usize>("n")?,
        bernoulli_p: args.need_parse::<f64>("p")?,
        condition_number: None,
        snr_db: None,
        seed,
    })?;
    let hybrid_cfg = HybridConfig {
        variant,
        k,
        lambda0: args.parse_or::<f64>("lambda0", 0.1)?,
        mode: Mode::Untrained,
        seed,
        ..Default::default()
    };
    let op = match args.get("operator").unwrap_or("conv") {
        "conv" => Operator::conv_residual(ConvStackSpec::default()),
        "zero" => Operator::zero(),
        "lipschitz" => Operator::lipschitz_residual(ConvStackSpec::default()),
        other => return Err(Error::Arg(format!("unknown operator {other}"))),
    };
    let stages = match args.get("stages-file") {
        Some(f) => parse_stages_file(f)?,
        None => TrainConfig::default_schedule(
            k,
            args.parse_or::<f64>("lr", 2e-3)?,
            args.parse_or::<usize>("steps", 30)?,
        ),
    };
    let tc = TrainConfig {
        stages,
        batch_size: args.parse_or::<usize>("batch-size", 32)?,
        train_size: args.need_parse::<usize>("train-size")?,
        val_size: args.need_parse::<usize>("val-size")?,
        seed,
        jobs: args.parse_or::<usize>("jobs", 1)?.max(1),
    };
    let out = PathBuf::from(args.need("out")?);
    fs::create_dir_all(&out)?;

    let template = sampler.instance(0)?;
    let store = hybrid::init_store(&template, &hybrid_cfg, &op)?;
    let (trained, log) = stagewise_train(&sampler, &hybrid_cfg, &op, &tc, store)?;
    trained.save(&out.join(format!("{name}.ulp")))?;
    let mut csv = String::from("stage,step,train_loss,val_nmse_db,lr\n");
    for row in &log {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.stage,
            row.step,
            row.train_loss,
            if row.val_nmse_db.is_nan() { String::new() } else { row.val_nmse_db.to_string() },
            row.lr
        ));
    }
    fs::write(out.join("train_log.csv"), csv)?;
    Ok(())
}

fn cmd_plot(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &["out", "config"])?;
    let out = PathBuf::from(args.need("out")?);
    if args.positional.is_empty() {
        return Err(Error::Arg("plot needs at least one trace CSV".into()));
    }
    let mut curves = Vec::new();
    for path in &args.positional {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Empty(format!("{path} has no header")))?;
        let cols: Vec<&str> = header.split(',').collect();
        let n_idx = cols
            .iter()
            .position(|c| *c == "n")
            .ok_or_else(|| Error::Parse(format!("{path}: no n column")))?;
        let y_idx = cols
            .iter()
            .position(|c| *c == "nmse_db")
            .ok_or_else(|| Error::Parse(format!("{path}: no nmse_db column")))?;
        let mut points = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let n: usize = fields[n_idx]
                .parse()
                .map_err(|_| Error::Parse(format!("{path}: bad n {}", fields[n_idx])))?;
            let y = if fields[y_idx] == "-inf" {
                f64::NEG_INFINITY
            } else {
                fields[y_idx]
                    .parse()
                    .map_err(|_| Error::Parse(format!("{path}: bad nmse {}", fields[y_idx])))?
            };
            points.push((n, y));
        }
        if points.is_empty() {
            return Err(Error::Empty(format!("{path} has no data rows")));
        }
        let label = Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| path.clone());
        curves.push(svg::TraceCurve { label, points });
    }
    fs::write(&out, svg::render(&curves)?)?;
    Ok(())
}

fn cmd_count_params(argv: &[String]) -> Result<()> {
    let args = parse_args(argv, &["solver", "k", "m", "n", "config"])?;
    let name = args.need("solver")?;
    let k = args.need_parse::<usize>("k")?;
    let count = if name == "alista-form" {
        count_parameters(&crate::train::alista_form_store(k))
    } else {
        let variant = Variant::parse(name)?;
        let op = Operator::conv_residual(ConvStackSpec::default());
        let store = crate::train::variant_store_for_count(
            variant,
            k,
            args.need_parse::<usize>("m")?,
            args.need_parse::<usize>("n")?,
            &op,
        )?;
        count_parameters(&store)
    };
    println!("{count}");
    Ok(())
}
