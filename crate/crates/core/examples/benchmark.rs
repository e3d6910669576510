//! A reduced end-to-end benchmark: every method on two tasks, written to
//! disk like the `benchmark` subcommand does.

use flowmi::bench::{run_benchmark, write_outputs, RunConfig, RunManifest, TaskSpec};
use flowmi::Result;

fn main() -> Result<()> {
    let mut cfg = RunConfig::default();
    cfg.dataset.n_studies = 80;
    cfg.optimizer.epochs = 60;
    cfg.optimizer.lr = 1e-3;
    cfg.tasks = TaskSpec::parse_list("CT->CTC; DCE1,DCE3->DCE2")?;
    let start = std::time::Instant::now();
    let run = run_benchmark(&cfg)?;
    print!("{}", run.table.render());
    let out = std::env::temp_dir().join("flowmi_example_benchmark");
    write_outputs(&out, &run.table, &RunManifest::new(&cfg, start.elapsed().as_secs_f64(), run.timings))?;
    println!("config {} -> {}", &cfg.hash()[..12], out.display());
    Ok(())
}
