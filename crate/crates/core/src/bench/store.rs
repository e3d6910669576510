//! Trained models on disk: one directory per family holding `vae.pmpw`,
//! `flow.pmpw`, `direct.pmpw` and `train_log.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::FamilyModels;
use crate::checkpoint::{read_direct, read_flow, read_vae, write_direct, write_flow, write_vae};
use crate::error::{Error, Result};
use crate::synth::Family;
use crate::train::TrainHistory;

#[derive(Serialize, Deserialize)]
struct TrainLog {
    family: Family,
    seconds: f64,
    trained_on: BTreeSet<String>,
    histories: BTreeMap<String, TrainHistory>,
}

pub fn save_models(dir: &Path, models: &BTreeMap<Family, FamilyModels>) -> Result<()> {
    for fm in models.values() {
        let d = dir.join(fm.family.name());
        fs::create_dir_all(&d)?;
        write_vae(&mut BufWriter::new(File::create(d.join("vae.pmpw"))?), &fm.vae)?;
        write_flow(&mut BufWriter::new(File::create(d.join("flow.pmpw"))?), &fm.field)?;
        write_direct(&mut BufWriter::new(File::create(d.join("direct.pmpw"))?), &fm.direct)?;
        let log = TrainLog {
            family: fm.family,
            seconds: fm.seconds,
            trained_on: fm.trained_on.clone(),
            histories: fm.histories.clone(),
        };
        fs::write(d.join("train_log.json"), serde_json::to_string_pretty(&log)? + "\n")?;
    }
    Ok(())
}

pub fn load_family(dir: &Path, family: Family) -> Result<FamilyModels> {
    let d = dir.join(family.name());
    let open = |name: &str| {
        File::open(d.join(name))
            .map(BufReader::new)
            .map_err(|e| Error::from(e).context(format!("opening {}", d.join(name).display())))
    };
    let log: TrainLog = serde_json::from_str(&fs::read_to_string(d.join("train_log.json"))?)?;
    if log.family != family {
        return Err(Error::Format(format!("{} holds {} models", d.display(), log.family)));
    }
    Ok(FamilyModels {
        family,
        vae: read_vae(&mut open("vae.pmpw")?)?,
        field: read_flow(&mut open("flow.pmpw")?)?,
        direct: read_direct(&mut open("direct.pmpw")?)?,
        histories: log.histories,
        trained_on: log.trained_on,
        seconds: log.seconds,
    })
}

/// Loads every family in `families`.
pub fn load_models(dir: &Path, families: &BTreeSet<Family>) -> Result<BTreeMap<Family, FamilyModels>> {
    families.iter().map(|&f| Ok((f, load_family(dir, f)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::run::{tests::tiny_config, train_all};
    use crate::checkpoint::vae_bytes;
    use crate::synth::generate_dataset;

    #[test]
    fn models_round_trip() {
        let mut cfg = tiny_config();
        cfg.optimizer.epochs = 1;
        let ds = generate_dataset(cfg.seed, &cfg.dataset).unwrap();
        let models = train_all(&cfg, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_models(dir.path(), &models).unwrap();
        let back = load_models(dir.path(), &models.keys().copied().collect()).unwrap();
        for (f, fm) in &models {
            let b = &back[f];
            assert_eq!(vae_bytes(&b.vae), vae_bytes(&fm.vae));
            assert_eq!((&b.field, &b.direct), (&fm.field, &fm.direct));
            assert_eq!(b.trained_on, fm.trained_on);
        }
        assert!(load_family(dir.path().join("nowhere").as_path(), Family::CtPair).is_err());
    }
}
