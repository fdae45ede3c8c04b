use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use mowe::eval::{
    evaluate_leads, export_weight_maps, fuse_record, oracle_blend, score_dataset, write_field, Weighting,
    DEFAULT_RIDGE,
};
use mowe::gating::count_params;
use mowe::synthdata::{
    check_stats_integrity, generate, hex, Dataset, GeneratorConfig, DATASET_MAGIC, STATS_TOLERANCE,
};
use mowe::training::{
    composite_gradcheck, load_checkpoint, train, Checkpoint, TrainSettings, CHECKPOINT_MAGIC,
};
use mowe::{Error, Result};
use numcore::checks::{check_kernel, KERNEL_CASES};

const GRADCHECK_EPSILON: f64 = 1e-5;
const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Mixture-of-weather-experts toolkit: synthetic data, gate training,
/// evaluation and fusion.
#[derive(Parser, Debug)]
#[command(name = "mowe", version)]
struct Cli {
    /// Worker threads for generation and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Force serial, replayable execution paths.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate truth and expert forecasts; writes <out>/train.mowe and <out>/test.mowe.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_inits: Option<usize>,
        #[arg(long)]
        test_inits: Option<usize>,
    },
    /// Train a gate on a train split.
    Train(TrainArgs),
    /// Score a checkpoint (or only the baselines) on a test split.
    Evaluate {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add the per-pixel ridge oracle row, fitted on the train split.
        #[arg(long)]
        oracle: bool,
        /// Train split for the oracle fit; defaults to train.mowe next to --data.
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RIDGE)]
        ridge: f64,
        #[arg(long, default_value = "uniform")]
        weighting: String,
    },
    /// Blend one record and export its weight and bias maps.
    Fuse {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: usize,
        #[arg(long)]
        lead: u32,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every kernel and of gate+fusion+MSE.
    Gradcheck {
        /// 20 seeds per case instead of 3.
        #[arg(long)]
        full: bool,
    },
    /// Print the header of a dataset or checkpoint file.
    Inspect { file: PathBuf },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat key-value settings file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    batch: Option<usize>,
    /// base | small
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    /// Clip the global gradient norm at 1.0.
    #[arg(long)]
    clip: bool,
    /// f32 | f64
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    noise_dim: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u32>,
    /// Print the running mean loss every this many steps.
    #[arg(long, default_value_t = 100)]
    log_every: u32,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}

fn run(cli: Cli) -> Result<()> {
    let jobs = if cli.deterministic { 1 } else { cli.jobs.max(1) };
    match cli.command {
        Command::Generate { config, out, seed, train_inits, test_inits } => {
            let mut cfg = GeneratorConfig::load(&config)?;
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = train_inits {
                cfg.train_inits = v;
            }
            if let Some(v) = test_inits {
                cfg.test_inits = v;
            }
            cfg.validate()?;
            println!("# generate out={} jobs={}\n{}", out.display(), jobs, cfg.to_toml());
            let paths = generate(&cfg, &out, jobs)?;
            println!("wrote {}", paths.train.display());
            if let Some(p) = paths.test {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Train(a) => run_train(a, cli.deterministic),
        Command::Evaluate { ckpt, data, out, oracle, train_data, ridge, weighting } => {
            let weighting = Weighting::parse(&weighting, None)?;
            let test = Dataset::open(&data)?;
            let ckpt = ckpt.map(|p| load_checkpoint(&p).map(|c| (p, c))).transpose()?;
            let train_path = oracle.then(|| train_data.unwrap_or_else(|| sibling_train(&data)));
            println!(
                "# evaluate ckpt={} data={} out={} weighting={} oracle={} ridge={} jobs={}",
                ckpt.as_ref().map_or("-".into(), |(p, _)| p.display().to_string()),
                data.display(),
                out.display(),
                weighting.name(),
                train_path.as_ref().map_or("-".into(), |p| p.display().to_string()),
                ridge,
                jobs
            );
            let mut table = match &ckpt {
                Some((_, c)) => evaluate_leads(c, &test, &weighting, jobs)?,
                None => score_dataset(&test, None, &weighting, jobs)?,
            };
            if let Some(p) = train_path {
                let train = Dataset::open(&p)?;
                let (_, o) = oracle_blend(&train, &test, ridge, &weighting, jobs)?;
                table.merge(&o)?;
            }
            table.write(&out)?;
            print!("{}", table.summary());
            Ok(())
        }
        Command::Fuse { ckpt, data, init, lead, out } => {
            let c = load_checkpoint(&ckpt)?;
            let ds = Dataset::open(&data)?;
            println!(
                "# fuse ckpt={} data={} init={} lead={} out={}",
                ckpt.display(),
                data.display(),
                init,
                lead,
                out.display()
            );
            mowe::eval::check_pairing(&c, &ds)?;
            let net = c.network()?;
            let fused = fuse_record(&net, &ds, init, lead)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("fused_{}h.f32", lead));
            write_field(&path, &fused, &format!("physical units; init = {}; lead = {}h", init, lead))?;
            let rows = export_weight_maps(&net, &ds, init, &[lead], &out)?;
            println!("wrote {} and weight maps in {}", path.display(), out.display());
            for r in rows {
                println!(
                    "lead {}h mean weights {:?} mean entropy {:.4}",
                    r.lead, r.mean_weights, r.mean_entropy
                );
            }
            Ok(())
        }
        Command::Gradcheck { full } => run_gradcheck(full),
        Command::Inspect { file } => {
            println!("# inspect {}", file.display());
            inspect(&file)
        }
    }
}

fn sibling_train(test: &Path) -> PathBuf {
    test.parent().unwrap_or(Path::new(".")).join("train.mowe")
}

fn run_train(a: TrainArgs, deterministic: bool) -> Result<()> {
    let file = match &a.config {
        Some(p) => TrainSettings::load(p)?,
        None => TrainSettings::default(),
    };
    let flags = TrainSettings {
        size: a.size.clone(),
        noise_dim: a.noise_dim,
        steps: a.steps,
        batch: a.batch,
        lr: a.lr,
        clip: a.clip.then_some(true),
        checkpoint_every: a.checkpoint_every,
        seed: a.seed,
        precision: a.precision.clone(),
        ..TrainSettings::default()
    };
    let data = Dataset::open(&a.data)?;
    let mut cfg = file.overlay(flags).resolve(data.manifest())?;
    cfg.deterministic = deterministic;
    println!(
        "# train data={} out={}\n{}\nparameters: {}",
        a.data.display(),
        a.out.display(),
        cfg.describe(),
        count_params(&cfg.gate)
    );
    let every = a.log_every.max(1);
    let mut window = 0.0;
    let ckpt = train(&cfg, &data, Some(&a.out), |step, loss| {
        if step == 0 {
            info!("step 0 loss {:.6}", loss);
        }
        window += loss;
        if (step + 1) % every == 0 {
            info!("step {} mean loss {:.6}", step + 1, window / every as f64);
            window = 0.0;
        }
    })?;
    println!("wrote {} (id {}, {} steps)", a.out.display(), ckpt.id()?, ckpt.step);
    Ok(())
}

fn run_gradcheck(full: bool) -> Result<()> {
    let seeds: u64 = if full { 20 } else { 3 };
    println!("# gradcheck seeds={} epsilon={:e} tolerance={:e} precision=f64", seeds, GRADCHECK_EPSILON, GRADCHECK_TOLERANCE);
    let mut failed = Vec::new();
    let mut report = |name: &str, worst: f64| {
        let ok = worst < GRADCHECK_TOLERANCE;
        println!("{:<26} max_rel_error {:.3e} {}", name, worst, if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(name.to_string());
        }
    };
    for name in KERNEL_CASES {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            worst = worst.max(check_kernel(name, seed, GRADCHECK_EPSILON)?.max_rel_error);
        }
        report(name, worst);
    }
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        worst = worst.max(composite_gradcheck(seed, GRADCHECK_EPSILON)?.max_rel_error);
    }
    report("gate+fusion+mse", worst);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("gradient check failed for {:?}", failed)))
    }
}

fn inspect(path: &Path) -> Result<()> {
    let mut head = [0u8; 8];
    {
        use std::io::Read;
        let mut f = std::fs::File::open(path)?;
        let n = f.read(&mut head)?;
        if n < 8 {
            return Err(Error::Format { offset: n as u64, detail: "file shorter than a magic number".into() });
        }
    }
    if &head == DATASET_MAGIC {
        let ds = Dataset::open(path)?;
        println!("kind = dataset\n{}", ds.manifest().summary());
        match check_stats_integrity(path, ds.manifest()) {
            Ok(dev) => println!(
                "stats_recomputed_max_rel_deviation = {:.3e} ({})",
                dev,
                if dev <= STATS_TOLERANCE { "ok" } else { "WARNING" }
            ),
            Err(e) => println!("stats_recomputed = unavailable ({})", e),
        }
    } else if &head == CHECKPOINT_MAGIC {
        let c = load_checkpoint(path)?;
        print!("{}", describe_checkpoint(&c)?);
    } else {
        return Err(Error::Format { offset: 0, detail: format!("unrecognized magic {:?}", head) });
    }
    Ok(())
}

fn describe_checkpoint(c: &Checkpoint) -> Result<String> {
    let g = &c.config;
    Ok(format!(
        "kind = checkpoint\nid = {}\nstep = {}\ndataset_family = {}\n\
         dims = N {} C {} H {} W {}\n\
         gate = patch {} hidden {} depth {} heads {} mlp_ratio {} noise_dim {}\nleads = {:?}\n\
         parameters = {}\nloss_history = {} entries, last {:?}\n",
        c.id()?,
        c.step,
        hex(&c.dataset_hash),
        g.n_experts,
        g.channels,
        g.height,
        g.width,
        g.patch_size,
        g.hidden_size,
        g.depth,
        g.heads,
        g.mlp_ratio,
        g.noise_dim,
        g.lead_set,
        count_params(g),
        c.loss_history.len(),
        c.loss_history.last()
    ))
}
