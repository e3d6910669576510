use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{read_study_images, write_study};
use super::phantom::{generate_study, OrganClass, PhantomConfig, PhantomSpec};
use super::split::{apportion, split, Splits};
use super::{Family, Study};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_studies: usize,
    pub classes: Vec<OrganClass>,
    pub phantom: PhantomConfig,
    pub ratios: [f64; 3],
    pub mini_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_studies: 200,
            classes: OrganClass::defaults(),
            phantom: PhantomConfig::default(),
            ratios: [0.7, 0.1, 0.2],
            mini_fraction: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyEntry {
    pub id: String,
    pub class: u32,
    pub family: Family,
}

/// On-disk description of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub spec: DatasetConfig,
    pub studies: Vec<StudyEntry>,
    pub splits: Splits,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub studies: BTreeMap<String, Study>,
}

/// Number of studies per class, in `classes` order.
pub fn class_counts(n_studies: usize, classes: &[OrganClass]) -> Result<Vec<usize>> {
    if classes.is_empty() {
        return Err(Error::contract("no organ classes configured"));
    }
    if let Some(c) = classes.iter().find(|c| !(c.weight > 0.0 && c.weight.is_finite())) {
        return Err(Error::contract(format!("class {} has non-positive weight {}", c.label, c.weight)));
    }
    let weights: Vec<f64> = classes.iter().map(|c| c.weight).collect();
    Ok(apportion(n_studies, &weights))
}

fn class_of_index<'a>(index: usize, classes: &'a [OrganClass], counts: &[usize]) -> &'a OrganClass {
    let mut acc = 0;
    for (c, &k) in classes.iter().zip(counts) {
        acc += k;
        if index < acc {
            return c;
        }
    }
    classes.last().expect("non-empty")
}

fn study_id(index: usize) -> String {
    format!("study_{index:04}")
}

/// Rebuilds study `index` of the dataset generated from (`seed`, `cfg`)
/// without generating the others.
pub fn regenerate_study(seed: u64, cfg: &DatasetConfig, index: usize) -> Result<Study> {
    if index >= cfg.n_studies {
        return Err(Error::contract(format!("study index {index} of {}", cfg.n_studies)));
    }
    let counts = class_counts(cfg.n_studies, &cfg.classes)?;
    let class = class_of_index(index, &cfg.classes, &counts);
    let mut rng = Rng::new(derive_seed(seed, index as u64));
    let spec = PhantomSpec::sample(&mut rng, &cfg.phantom, class)?;
    generate_study(&mut rng, &spec, class.family, class.label, study_id(index))
}

/// Generates all studies (each from its own derived seed) and the
/// stratified splits.
pub fn generate_dataset(seed: u64, cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.n_studies < 20 {
        return Err(Error::contract(format!("need at least 20 studies, got {}", cfg.n_studies)));
    }
    let counts = class_counts(cfg.n_studies, &cfg.classes)?;
    let mut labels = std::collections::BTreeSet::new();
    if cfg.classes.iter().any(|c| !labels.insert(c.label)) {
        return Err(Error::contract("duplicate organ class label"));
    }
    let mut studies = BTreeMap::new();
    let mut entries = Vec::with_capacity(cfg.n_studies);
    for i in 0..cfg.n_studies {
        let s = regenerate_study(seed, cfg, i)?;
        debug_assert_eq!(class_of_index(i, &cfg.classes, &counts).label, s.organ_class);
        entries.push(StudyEntry {
            id: s.id.clone(),
            class: s.organ_class,
            family: s.family,
        });
        studies.insert(s.id.clone(), s);
    }
    let keyed: Vec<(String, u32)> = entries.iter().map(|e| (e.id.clone(), e.class)).collect();
    let splits = split(&keyed, cfg.ratios, cfg.mini_fraction, seed)?;
    Ok(Dataset {
        manifest: DatasetManifest {
            seed,
            spec: cfg.clone(),
            studies: entries,
            splits,
        },
        studies,
    })
}

impl Dataset {
    pub fn study(&self, id: &str) -> Result<&Study> {
        self.studies
            .get(id)
            .ok_or_else(|| Error::contract(format!("unknown study {id}")))
    }

    /// Studies of `ids` in the given order.
    pub fn select<'a>(&'a self, ids: &'a [String]) -> impl Iterator<Item = Result<&'a Study>> + 'a {
        ids.iter().map(|id| self.study(id))
    }

    /// Writes `manifest.json` and one `.pmpb` file per study under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("studies"))?;
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(dir.join("manifest.json"), json + "\n")?;
        for s in self.studies.values() {
            let mut f = fs::File::create(dir.join("studies").join(format!("{}.pmpb", s.id)))?;
            write_study(&mut f, s)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut studies = BTreeMap::new();
        for e in &manifest.studies {
            let mut f = fs::File::open(dir.join("studies").join(format!("{}.pmpb", e.id)))?;
            let images = read_study_images(&mut f)?;
            if images.keys().any(|m| m.family() != e.family) {
                return Err(Error::Format(format!("study {} mixes modality families", e.id)));
            }
            studies.insert(
                e.id.clone(),
                Study {
                    id: e.id.clone(),
                    organ_class: e.class,
                    family: e.family,
                    images,
                    phantom: None,
                },
            );
        }
        Ok(Self { manifest, studies })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> DatasetConfig {
        DatasetConfig {
            n_studies: n,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn single_study_regenerates_identically() {
        let cfg = small(20);
        let ds = generate_dataset(11, &cfg).unwrap();
        let alone = regenerate_study(11, &cfg, 7).unwrap();
        assert_eq!(&alone, ds.study("study_0007").unwrap());
    }

    #[test]
    fn single_class_mix() {
        let mut cfg = small(30);
        cfg.classes.truncate(1);
        cfg.classes[0].weight = 1.0;
        let ds = generate_dataset(1, &cfg).unwrap();
        assert!(ds.manifest.studies.iter().all(|e| e.class == 0));
    }

    #[test]
    fn non_positive_weight_is_rejected() {
        let mut cfg = small(30);
        cfg.classes[1].weight = 0.0;
        assert!(generate_dataset(1, &cfg).is_err());
    }

    #[test]
    fn all_pixels_in_unit_interval() {
        let ds = generate_dataset(4, &small(200)).unwrap();
        for s in ds.studies.values() {
            for img in s.images.values() {
                assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let ds = generate_dataset(2, &small(24)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        for (id, s) in &ds.studies {
            assert_eq!(back.studies[id].images, s.images);
        }
    }
}
