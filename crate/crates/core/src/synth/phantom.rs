//! Ellipse-organ / disk-lesion phantoms with contrast enhancement confined
//! to the lesion.
//!
//! Pixel `(row, col)` sits at the point `(x, y) = (col, row)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Family, ModalityId, Study};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let u = (x - self.cx) / self.ax;
        let v = (y - self.cy) / self.ay;
        u * u + v * v <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    /// Pre-contrast lesion intensity.
    pub intensity: f64,
}

impl Disk {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Concrete geometry and contrast behaviour of one study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid: usize,
    pub background: f64,
    pub organ: Ellipse,
    pub lesion: Disk,
    /// Lesion intensity gain at full contrast uptake.
    pub enhancement: f64,
    /// Uptake weights of the three DCE phases.
    pub dce_weights: [f64; 3],
    /// Uptake weight of contrast-enhanced CT.
    pub ct_weight: f64,
    pub noise_sigma: f64,
}

const BOUNDARY_SAMPLES: usize = 180;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Spec(format!("{name} {v} outside [0, 1]")))
            }
        };
        if self.grid < 4 {
            return Err(Error::Spec(format!("grid {} too small", self.grid)));
        }
        unit("background", self.background)?;
        unit("organ intensity", self.organ.intensity)?;
        unit("lesion intensity", self.lesion.intensity)?;
        if !(self.organ.ax > 0.0 && self.organ.ay > 0.0 && self.lesion.radius > 0.0) {
            return Err(Error::Spec("non-positive organ axis or lesion radius".into()));
        }
        let [w1, w2, w3] = self.dce_weights;
        if w2 < w1 || w2 < w3 || w1 < 0.0 || w3 < 0.0 {
            return Err(Error::Spec(format!(
                "DCE weights {:?} must be non-negative and peak at phase 2",
                self.dce_weights
            )));
        }
        if self.ct_weight < 0.0 || self.enhancement < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Spec("negative enhancement, weight or noise".into()));
        }
        if !disk_inside_ellipse(&self.lesion, &self.organ) {
            return Err(Error::Spec(format!(
                "lesion at ({:.2}, {:.2}) radius {:.2} is not inside the organ",
                self.lesion.cx, self.lesion.cy, self.lesion.radius
            )));
        }
        Ok(())
    }

    /// Draws a random anatomy for one study of `class`.
    pub fn sample(rng: &mut Rng, cfg: &PhantomConfig, class: &OrganClass) -> Result<Self> {
        let g = cfg.grid as f64;
        let mid = (g - 1.0) / 2.0;
        let cx = mid + rng.uniform_range(-cfg.center_jitter, cfg.center_jitter);
        let cy = mid + rng.uniform_range(-cfg.center_jitter, cfg.center_jitter);
        let ax = rng.uniform_range(class.semi_axes[0], class.semi_axes[1]);
        let ay = rng.uniform_range(class.semi_axes[0], class.semi_axes[1]);
        let intensity = rng.uniform_range(class.intensity[0], class.intensity[1]);
        let organ = Ellipse {
            cx,
            cy,
            ax,
            ay,
            intensity,
        };
        let radius = rng.uniform_range(cfg.lesion_radius[0], cfg.lesion_radius[1]);
        let contrast = rng.uniform_range(cfg.lesion_contrast[0], cfg.lesion_contrast[1]);
        let enhancement = rng.uniform_range(cfg.enhancement[0], cfg.enhancement[1]);

        // Rejection-sample the lesion centre inside the organ's bounding box.
        let (rx, ry) = ((ax - radius).max(0.0), (ay - radius).max(0.0));
        let mut lesion = None;
        for _ in 0..1000 {
            let candidate = Disk {
                cx: cx + rng.uniform_range(-rx, rx),
                cy: cy + rng.uniform_range(-ry, ry),
                radius,
                intensity: (intensity - contrast).clamp(0.0, 1.0),
            };
            if disk_inside_ellipse(&candidate, &organ) {
                lesion = Some(candidate);
                break;
            }
        }
        let lesion = lesion.ok_or_else(|| {
            Error::Spec(format!("no lesion of radius {radius:.2} fits organ ({ax:.2}, {ay:.2})"))
        })?;
        let spec = Self {
            grid: cfg.grid,
            background: cfg.background,
            organ,
            lesion,
            enhancement,
            dce_weights: cfg.dce_weights,
            ct_weight: cfg.ct_weight,
            noise_sigma: cfg.noise_sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn mask(&self, inside: impl Fn(f64, f64) -> bool) -> Vec<bool> {
        let g = self.grid;
        (0..g * g)
            .map(|i| inside((i % g) as f64, (i / g) as f64))
            .collect()
    }

    pub fn organ_mask(&self) -> Vec<bool> {
        self.mask(|x, y| self.organ.contains(x, y))
    }

    pub fn lesion_mask(&self) -> Vec<bool> {
        self.mask(|x, y| self.lesion.contains(x, y))
    }

    /// Contrast uptake weight of `m` (zero for non-contrast CT).
    pub fn uptake(&self, m: ModalityId) -> f64 {
        match m {
            ModalityId::CT => 0.0,
            ModalityId::CTC => self.ct_weight,
            ModalityId::DCE1 => self.dce_weights[0],
            ModalityId::DCE2 => self.dce_weights[1],
            ModalityId::DCE3 => self.dce_weights[2],
        }
    }

    /// Noise-free image of `m`, before clipping.
    pub fn clean_image(&self, m: ModalityId) -> Vec<f64> {
        let organ = self.organ_mask();
        let lesion = self.lesion_mask();
        let gain = self.uptake(m) * self.enhancement;
        organ
            .iter()
            .zip(&lesion)
            .map(|(&o, &l)| {
                if l {
                    self.lesion.intensity + gain
                } else if o {
                    self.organ.intensity
                } else {
                    self.background
                }
            })
            .collect()
    }
}

fn disk_inside_ellipse(d: &Disk, e: &Ellipse) -> bool {
    if !e.contains(d.cx, d.cy) {
        return false;
    }
    (0..BOUNDARY_SAMPLES).all(|k| {
        let a = std::f64::consts::TAU * k as f64 / BOUNDARY_SAMPLES as f64;
        e.contains(d.cx + d.radius * a.cos(), d.cy + d.radius * a.sin())
    })
}

/// Sampling ranges shared by every organ class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub grid: usize,
    pub background: f64,
    pub center_jitter: f64,
    pub lesion_radius: [f64; 2],
    /// How much darker the lesion is than the organ before contrast.
    pub lesion_contrast: [f64; 2],
    pub enhancement: [f64; 2],
    pub dce_weights: [f64; 3],
    pub ct_weight: f64,
    pub noise_sigma: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            grid: 16,
            background: 0.08,
            center_jitter: 1.0,
            lesion_radius: [1.8, 3.2],
            lesion_contrast: [0.05, 0.12],
            enhancement: [0.35, 0.5],
            dce_weights: [0.3, 1.0, 0.6],
            ct_weight: 1.0,
            noise_sigma: 0.02,
        }
    }
}

/// A stratification class standing in for an organ group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrganClass {
    pub label: u32,
    pub name: String,
    pub family: Family,
    /// Relative share of the dataset.
    pub weight: f64,
    pub intensity: [f64; 2],
    pub semi_axes: [f64; 2],
}

impl OrganClass {
    pub fn defaults() -> Vec<OrganClass> {
        vec![
            OrganClass {
                label: 0,
                name: "liver".into(),
                family: Family::CtPair,
                weight: 0.25,
                intensity: [0.45, 0.55],
                semi_axes: [5.0, 6.5],
            },
            OrganClass {
                label: 1,
                name: "kidney".into(),
                family: Family::CtPair,
                weight: 0.25,
                intensity: [0.35, 0.45],
                semi_axes: [4.5, 5.5],
            },
            OrganClass {
                label: 2,
                name: "breast".into(),
                family: Family::DceTriplet,
                weight: 0.5,
                intensity: [0.30, 0.45],
                semi_axes: [5.0, 6.5],
            },
        ]
    }
}

/// Renders every modality of `family` from `spec`, drawing independent
/// Gaussian noise per modality and clipping to `[0, 1]`.
pub fn generate_study(
    rng: &mut Rng,
    spec: &PhantomSpec,
    family: Family,
    organ_class: u32,
    id: impl Into<String>,
) -> Result<Study> {
    spec.validate()?;
    let g = spec.grid;
    let mut images = BTreeMap::new();
    for &m in family.modalities() {
        let data = spec
            .clean_image(m)
            .into_iter()
            .map(|v| (v + spec.noise_sigma * rng.normal()).clamp(0.0, 1.0))
            .collect();
        images.insert(m, Tensor::new(vec![g, g], data)?);
    }
    Ok(Study {
        id: id.into(),
        organ_class,
        family,
        images,
        phantom: Some(spec.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> PhantomSpec {
        let cfg = PhantomConfig::default();
        PhantomSpec::sample(&mut Rng::new(5), &cfg, &OrganClass::defaults()[0]).unwrap()
    }

    #[test]
    fn zero_uptake_makes_ct_and_ctc_identical() {
        let mut s = spec();
        s.noise_sigma = 0.0;
        s.ct_weight = 0.0;
        let st = generate_study(&mut Rng::new(1), &s, Family::CtPair, 0, "a").unwrap();
        assert_eq!(st.images[&ModalityId::CT], st.images[&ModalityId::CTC]);
    }

    #[test]
    fn ctc_differs_only_on_lesion() {
        let mut s = spec();
        s.noise_sigma = 0.0;
        let st = generate_study(&mut Rng::new(1), &s, Family::CtPair, 0, "a").unwrap();
        let lesion = s.lesion_mask();
        let ct = st.images[&ModalityId::CT].data();
        let ctc = st.images[&ModalityId::CTC].data();
        let mut any = false;
        for i in 0..ct.len() {
            if lesion[i] {
                any |= ctc[i] != ct[i];
            } else {
                assert_eq!(ctc[i], ct[i]);
            }
        }
        assert!(any);
    }

    #[test]
    fn dce_lesion_means_peak_at_phase_two() {
        let mut s = spec();
        s.noise_sigma = 0.0;
        let st = generate_study(&mut Rng::new(1), &s, Family::DceTriplet, 2, "a").unwrap();
        let lesion = s.lesion_mask();
        let n = lesion.iter().filter(|&&l| l).count() as f64;
        let mean = |m: ModalityId| {
            st.images[&m]
                .data()
                .iter()
                .zip(&lesion)
                .filter(|(_, &l)| l)
                .map(|(v, _)| v)
                .sum::<f64>()
                / n
        };
        // expected lesion means straight from the construction
        let base = s.lesion.intensity;
        let want = |w: f64| (base + w * s.enhancement).min(1.0);
        assert!((mean(ModalityId::DCE1) - want(0.3)).abs() < 1e-12);
        assert!((mean(ModalityId::DCE2) - want(1.0)).abs() < 1e-12);
        assert!((mean(ModalityId::DCE3) - want(0.6)).abs() < 1e-12);
        assert!(mean(ModalityId::DCE2) > mean(ModalityId::DCE3));
        assert!(mean(ModalityId::DCE3) > mean(ModalityId::DCE1));
    }

    #[test]
    fn lesion_outside_organ_is_a_spec_error() {
        let mut s = spec();
        s.lesion.cx = s.organ.cx + s.organ.ax;
        let err = generate_study(&mut Rng::new(1), &s, Family::CtPair, 0, "a");
        assert!(matches!(err, Err(Error::Spec(_))));
    }

    #[test]
    fn phase_weights_must_peak_in_the_middle() {
        let mut s = spec();
        s.dce_weights = [1.0, 0.5, 0.2];
        assert!(s.validate().is_err());
    }

    #[test]
    fn anatomy_agrees_outside_lesion_without_noise() {
        let mut s = spec();
        s.noise_sigma = 0.0;
        let st = generate_study(&mut Rng::new(2), &s, Family::DceTriplet, 2, "a").unwrap();
        let lesion = s.lesion_mask();
        let imgs: Vec<&Tensor> = st.images.values().collect();
        for i in 0..lesion.len() {
            if !lesion[i] {
                assert_eq!(imgs[0].data()[i], imgs[1].data()[i]);
                assert_eq!(imgs[1].data()[i], imgs[2].data()[i]);
            }
        }
    }

    #[test]
    fn lesion_pixels_lie_in_organ() {
        for seed in 0..200 {
            let cls = &OrganClass::defaults()[(seed % 3) as usize];
            let s = PhantomSpec::sample(&mut Rng::new(seed), &PhantomConfig::default(), cls).unwrap();
            let organ = s.organ_mask();
            for (l, o) in s.lesion_mask().iter().zip(&organ) {
                assert!(!l || *o);
            }
        }
    }
}
