use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use flowmi::bench::verify::{render, run_suites};
use flowmi::bench::{
    evaluate_all, load_models, predict, run_benchmark, save_models, train_all, write_outputs, Method, ResultsTable,
    RunConfig, RunManifest, TaskSpec, Timing,
};
use flowmi::rng::{derive_seed, Rng};
use flowmi::synth::io::write_images;
use flowmi::synth::{generate_dataset, Dataset};
use flowmi::Result;

#[derive(Parser)]
#[command(name = "pmpbench", version, about = "Synthetic paired-modality imputation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run config, or a `manifest.json` from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `;`-separated tasks, e.g. "CT->CTC;DCE1,DCE3->DCE2".
    #[arg(long)]
    tasks: Option<String>,
    /// Score the whole test split instead of test-mini.
    #[arg(long)]
    full_test: bool,
    #[arg(long, default_value = "pmp_out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset to `<out>/dataset`.
    Generate(Common),
    /// Train every model the tasks need; weights go to `<out>/models`.
    Train(Common),
    /// Impute the task outputs of every evaluation study with saved models.
    Impute {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "flowmi")]
        method: String,
    },
    /// Score saved models and write the result files.
    Evaluate(Common),
    /// Generate, train and evaluate in one go.
    Benchmark(Common),
    /// Run the analytic invariant suites.
    Verify,
    /// Print the result tables found under `<out>`.
    Report(Common),
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = &c.tasks {
        cfg.tasks = TaskSpec::parse_list(t)?;
    }
    cfg.full_test |= c.full_test;
    cfg.validate()?;
    Ok(cfg)
}

fn families(cfg: &RunConfig) -> BTreeSet<flowmi::synth::Family> {
    cfg.tasks.iter().map(TaskSpec::family).collect()
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    generate_dataset(cfg.seed, &cfg.dataset)
}

fn finish(out: &Path, cfg: &RunConfig, table: &ResultsTable, start: Instant, timings: Vec<Timing>) -> Result<()> {
    let manifest = RunManifest::new(cfg, start.elapsed().as_secs_f64(), timings);
    write_outputs(out, table, &manifest)?;
    print!("{}", table.render());
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let start = Instant::now();
    match cli.command {
        Command::Generate(c) => {
            let cfg = resolve(&c)?;
            let ds = dataset(&cfg)?;
            ds.save(&c.out.join("dataset"))?;
            let s = &ds.manifest.splits;
            println!(
                "{} studies: train {}, val {}, test {}, test-mini {}",
                ds.studies.len(),
                s.train.len(),
                s.val.len(),
                s.test.len(),
                s.test_mini.len()
            );
        }
        Command::Train(c) => {
            let cfg = resolve(&c)?;
            let models = train_all(&cfg, &dataset(&cfg)?)?;
            save_models(&c.out.join("models"), &models)?;
            fs::write(c.out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
            for fm in models.values() {
                let last = |k: &str| fm.histories[k].epochs.last().map(|e| e[0]).unwrap_or(f64::NAN);
                println!(
                    "{}: vae {:.5}, flow {:.5}, direct {:.5} ({:.1}s)",
                    fm.family,
                    last("vae"),
                    last("flow"),
                    last("direct"),
                    fm.seconds
                );
            }
        }
        Command::Impute { common: c, method } => {
            let cfg = resolve(&c)?;
            let method: Method = method.parse()?;
            let ds = dataset(&cfg)?;
            let models = load_models(&c.out.join("models"), &families(&cfg))?;
            let ids = flowmi::bench::run::eval_ids(&cfg, &ds);
            for task in &cfg.tasks {
                let dir = c.out.join("imputed").join(method.name()).join(task.to_string().replace("->", "_to_"));
                fs::create_dir_all(&dir)?;
                let mut rng = Rng::new(derive_seed(cfg.seed, 0x500));
                let mut n = 0;
                for study in ds.select(&ids) {
                    let study = study?;
                    if study.family != task.family() {
                        continue;
                    }
                    let pred = predict(&cfg, models.get(&task.family()), task, method, study, &mut rng)?;
                    let images = task
                        .family()
                        .modalities()
                        .iter()
                        .zip(pred)
                        .filter(|(m, _)| task.outputs().contains(m))
                        .map(|(m, t)| (*m, t))
                        .collect();
                    write_images(&mut fs::File::create(dir.join(format!("{}.pmpb", study.id)))?, &images)?;
                    n += 1;
                }
                println!("{task}: {n} studies -> {}", dir.display());
            }
        }
        Command::Evaluate(c) => {
            let cfg = resolve(&c)?;
            let ds = dataset(&cfg)?;
            let models = load_models(&c.out.join("models"), &families(&cfg))?;
            let (table, timings) = evaluate_all(&cfg, &ds, &models, &Method::ALL)?;
            finish(&c.out, &cfg, &table, start, timings)?;
        }
        Command::Benchmark(c) => {
            let cfg = resolve(&c)?;
            let run = run_benchmark(&cfg)?;
            save_models(&c.out.join("models"), &run.models)?;
            finish(&c.out, &cfg, &run.table, start, run.timings)?;
        }
        Command::Verify => {
            let results = run_suites();
            print!("{}", render(&results));
            return Ok(results.iter().all(|r| r.passed));
        }
        Command::Report(c) => {
            let mut found = Vec::new();
            let mut dirs = vec![c.out.clone()];
            if let Ok(rd) = fs::read_dir(&c.out) {
                let mut subs: Vec<PathBuf> = rd.flatten().map(|e| e.path()).filter(|p| p.is_dir()).collect();
                subs.sort();
                dirs.extend(subs);
            }
            for d in dirs {
                let p = d.join("results.json");
                if p.exists() {
                    found.push((d, ResultsTable::load(&p)?));
                }
            }
            if found.is_empty() {
                eprintln!("no results.json under {}", c.out.display());
                return Ok(false);
            }
            for (d, t) in &found {
                println!("== {}", d.display());
                print!("{}", t.render());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
