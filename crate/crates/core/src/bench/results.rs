use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::Result;
use crate::metrics::{aggregate, float_or_tag, Aggregate, MetricReport, SampleScore};
use crate::synth::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: u32,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
}

/// One (method, task, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub task: String,
    pub seed: u64,
    pub n_studies: usize,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
    pub per_class: Vec<ClassScore>,
    pub per_sample: Vec<SampleScore>,
}

impl ResultRow {
    pub fn from_report(seed: u64, dataset: &Dataset, report: MetricReport) -> Result<Self> {
        let mut by_class: BTreeMap<u32, Vec<&SampleScore>> = BTreeMap::new();
        let mut studies = std::collections::BTreeSet::new();
        for s in &report.per_sample {
            by_class.entry(dataset.study(&s.study_id)?.organ_class).or_default().push(s);
            studies.insert(s.study_id.as_str());
        }
        let per_class = by_class
            .into_iter()
            .map(|(class, ss)| {
                Ok(ClassScore {
                    class,
                    psnr: aggregate(&ss.iter().map(|s| s.psnr_db).collect::<Vec<_>>())?,
                    ssim: aggregate(&ss.iter().map(|s| s.ssim_percent).collect::<Vec<_>>())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method: report.method,
            task: report.task,
            seed,
            n_studies: studies.len(),
            psnr: report.psnr,
            ssim: report.ssim,
            per_class,
            per_sample: report.per_sample,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

pub const CSV_HEADER: &str = "method,task,seed,n_studies,psnr_mean,psnr_std,ssim_mean,ssim_std";

fn csv_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        float_or_tag::tag(v).to_string()
    }
}

impl ResultsTable {
    pub fn new(rows: Vec<ResultRow>) -> Self {
        Self { rows }
    }

    pub fn row(&self, method: &str, task: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method && r.task == task)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            // Task strings contain commas.
            out.push_str(&format!(
                "{},\"{}\",{},{},{},{},{},{}\n",
                r.method,
                r.task,
                r.seed,
                r.n_studies,
                csv_num(r.psnr.mean),
                csv_num(r.psnr.std),
                csv_num(r.ssim.mean),
                csv_num(r.ssim.std)
            ));
        }
        out
    }

    /// Plain-text table, `mean ± std` per cell.
    pub fn render(&self) -> String {
        let mut out = format!("{:<12} {:<18} {:>6} {:>20} {:>20}\n", "method", "task", "seed", "PSNR dB", "SSIM %");
        for r in &self.rows {
            let cell = |a: &Aggregate| {
                if a.mean.is_finite() {
                    format!("{:.2} ± {:.2}", a.mean, a.std)
                } else {
                    format!("{} ± {:.2}", float_or_tag::tag(a.mean), a.std)
                }
            };
            out.push_str(&format!(
                "{:<12} {:<18} {:>6} {:>20} {:>20}\n",
                r.method,
                r.task,
                r.seed,
                cell(&r.psnr),
                cell(&r.ssim)
            ));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Everything needed to rerun a benchmark, plus how long it took.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    pub timings: Vec<Timing>,
}

impl RunManifest {
    pub fn new(config: &RunConfig, wall_clock_seconds: f64, timings: Vec<Timing>) -> Self {
        let versions = [
            ("flowmi", env!("CARGO_PKG_VERSION")),
            ("weights_format", "1"),
            ("results_format", "1"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            config: config.clone(),
            config_hash: config.hash(),
            seed: config.seed,
            versions,
            wall_clock_seconds,
            timings,
        }
    }
}

/// Writes `results.json`, `results.csv` and `manifest.json` into `dir`.
/// Only the manifest carries timings, so the first two depend on the
/// config alone.
pub fn write_outputs(dir: &Path, table: &ResultsTable, manifest: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.json"), table.to_json())?;
    fs::write(dir.join("results.csv"), table.to_csv())?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}
