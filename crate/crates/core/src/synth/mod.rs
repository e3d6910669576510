//! Synthetic paired-modality phantoms, intensity normalization, and the
//! stratified split protocol.

mod dataset;
pub mod io;
mod normalize;
mod phantom;
mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use dataset::{
    class_counts, generate_dataset, regenerate_study, Dataset, DatasetConfig, DatasetManifest,
    StudyEntry,
};
pub use normalize::{normalize_ct, normalize_mr, SOFT_TISSUE_WINDOW};
pub use phantom::{generate_study, Disk, Ellipse, OrganClass, PhantomConfig, PhantomSpec};
pub use split::{split, Splits};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModalityId {
    CT,
    CTC,
    DCE1,
    DCE2,
    DCE3,
}

impl ModalityId {
    pub const ALL: [ModalityId; 5] = [
        ModalityId::CT,
        ModalityId::CTC,
        ModalityId::DCE1,
        ModalityId::DCE2,
        ModalityId::DCE3,
    ];

    pub fn family(self) -> Family {
        match self {
            ModalityId::CT | ModalityId::CTC => Family::CtPair,
            _ => Family::DceTriplet,
        }
    }

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(c: u32) -> Result<Self> {
        Self::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown modality code {c}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ModalityId::CT => "CT",
            ModalityId::CTC => "CTC",
            ModalityId::DCE1 => "DCE1",
            ModalityId::DCE2 => "DCE2",
            ModalityId::DCE3 => "DCE3",
        }
    }
}

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse {
                position: 0,
                message: format!("unknown modality `{s}`"),
            })
    }
}

/// Acquisition family. Modalities of different families never share a
/// study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    CtPair,
    DceTriplet,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::CtPair, Family::DceTriplet];

    /// Modalities in model order; a modality's index here is its expert
    /// index in the autoencoder.
    pub fn modalities(self) -> &'static [ModalityId] {
        match self {
            Family::CtPair => &[ModalityId::CT, ModalityId::CTC],
            Family::DceTriplet => &[ModalityId::DCE1, ModalityId::DCE2, ModalityId::DCE3],
        }
    }

    pub fn len(self) -> usize {
        self.modalities().len()
    }

    pub fn index_of(self, m: ModalityId) -> Option<usize> {
        self.modalities().iter().position(|&x| x == m)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::CtPair => "ct_pair",
            Family::DceTriplet => "dce_triplet",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One synthetic patient.
#[derive(Clone, Debug, PartialEq)]
pub struct Study {
    pub id: String,
    pub organ_class: u32,
    pub family: Family,
    pub images: BTreeMap<ModalityId, Tensor>,
    /// Geometry the images were rendered from; absent for studies read
    /// back from disk.
    pub phantom: Option<PhantomSpec>,
}

impl Study {
    pub fn image(&self, m: ModalityId) -> Result<&Tensor> {
        self.images
            .get(&m)
            .ok_or_else(|| Error::contract(format!("study {} has no {m} image", self.id)))
    }

    pub fn image_shape(&self) -> Vec<usize> {
        self.images
            .values()
            .next()
            .map(|t| t.shape().to_vec())
            .unwrap_or_default()
    }

    /// All modalities of the family concatenated in model order.
    pub fn flatten(&self) -> Result<Tensor> {
        let mut data = Vec::new();
        for &m in self.family.modalities() {
            data.extend_from_slice(self.image(m)?.data());
        }
        Tensor::vector(data)
    }

    /// The same study restricted to `keep`.
    pub fn restricted(&self, keep: &[ModalityId]) -> Study {
        Study {
            images: self
                .images
                .iter()
                .filter(|(m, _)| keep.contains(m))
                .map(|(m, t)| (*m, t.clone()))
                .collect(),
            ..self.clone()
        }
    }
}

/// Flattened studies of one family, ready for batching.
#[derive(Clone, Debug)]
pub struct FamilyData {
    pub family: Family,
    pub ids: Vec<String>,
    pub rows: Vec<Tensor>,
    pub image_shape: Vec<usize>,
}

impl FamilyData {
    pub fn from_studies<'a>(family: Family, studies: impl IntoIterator<Item = &'a Study>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut image_shape = Vec::new();
        for s in studies {
            if s.family != family {
                continue;
            }
            if image_shape.is_empty() {
                image_shape = s.image_shape();
            } else if s.image_shape() != image_shape {
                return Err(Error::dim("family data", &image_shape, &s.image_shape()));
            }
            ids.push(s.id.clone());
            rows.push(s.flatten()?);
        }
        Ok(Self {
            family,
            ids,
            rows,
            image_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn image_dim(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn modalities(&self) -> usize {
        self.family.len()
    }
}
