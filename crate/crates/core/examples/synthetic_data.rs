//! Generate the phantom dataset, inspect one study and the splits, and
//! round-trip it through disk.

use flowmi::synth::{generate_dataset, DatasetConfig, Dataset, ModalityId};
use flowmi::Result;

fn main() -> Result<()> {
    let cfg = DatasetConfig {
        n_studies: 100,
        ..DatasetConfig::default()
    };
    let ds = generate_dataset(7, &cfg)?;
    let s = &ds.manifest.splits;
    println!(
        "train {} / val {} / test {} (test-mini {})",
        s.train.len(),
        s.val.len(),
        s.test.len(),
        s.test_mini.len()
    );

    let study = ds.studies.values().find(|s| s.images.contains_key(&ModalityId::CTC)).expect("a CT study");
    let spec = study.phantom.as_ref().expect("generated studies carry their phantom");
    let lesion = spec.lesion_mask();
    for m in [ModalityId::CT, ModalityId::CTC] {
        let img = study.image(m)?;
        let inside: f64 = img.data().iter().zip(&lesion).filter(|(_, &l)| l).map(|(v, _)| v).sum();
        let count = lesion.iter().filter(|&&l| l).count() as f64;
        println!("{} {m}: lesion mean {:.3}, image mean {:.3}", study.id, inside / count, img.mean());
    }

    let dir = std::env::temp_dir().join("flowmi_example_dataset");
    ds.save(&dir)?;
    let back = Dataset::load(&dir)?;
    println!("reloaded {} studies from {}", back.studies.len(), dir.display());
    Ok(())
}
