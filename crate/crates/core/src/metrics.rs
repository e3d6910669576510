//! PSNR, SSIM and mean ± sample-std aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `10·log10(max² / MSE)`; `+∞` when the images are identical.
pub fn psnr(pred: &Tensor, truth: &Tensor, max_val: f64) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim("psnr", pred.shape(), truth.shape()));
    }
    if !(max_val > 0.0) {
        return Err(Error::contract(format!("psnr max value {max_val}")));
    }
    if pred.is_empty() {
        return Err(Error::contract("psnr of empty images"));
    }
    let mse = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(psnr_from_mse(mse, max_val))
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let mut w = Vec::with_capacity(size * size);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Mean SSIM over every fully contained window position, in `[-1, 1]`.
pub fn ssim(pred: &Tensor, truth: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim("ssim", pred.shape(), truth.shape()));
    }
    let (h, w) = pred.dims2()?;
    if pred.shape().len() != 2 || h < cfg.window || w < cfg.window || cfg.window == 0 {
        return Err(Error::contract(format!(
            "ssim window {} does not fit image {:?}",
            cfg.window,
            pred.shape()
        )));
    }
    let k = cfg.window;
    let weights = gaussian_window(k, cfg.sigma);
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let (x, y) = (pred.data(), truth.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = weights[i * k + j];
                    let (a, b) = (x[(r + i) * w + c + j], y[(r + i) * w + c + j]);
                    mx += wt * a;
                    my += wt * b;
                    sxx += wt * a * a;
                    syy += wt * b * b;
                    sxy += wt * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean and sample standard deviation.
///
/// A `+∞` value (a perfect PSNR) makes the mean infinite and is left out of
/// the standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    #[serde(with = "float_or_tag")]
    pub mean: f64,
    #[serde(with = "float_or_tag")]
    pub std: f64,
    /// Fewer than two finite values: `std` is reported as 0.
    pub std_undefined: bool,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::contract("aggregate of an empty list"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("aggregate input".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (std, std_undefined) = if finite.len() < 2 {
        (0.0, true)
    } else {
        let m = finite.iter().sum::<f64>() / finite.len() as f64;
        let ss: f64 = finite.iter().map(|v| (v - m).powi(2)).sum();
        ((ss / (finite.len() - 1) as f64).sqrt(), false)
    };
    Ok(Aggregate {
        n,
        mean,
        std,
        std_undefined,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub study_id: String,
    pub modality: String,
    #[serde(with = "float_or_tag")]
    pub psnr_db: f64,
    pub ssim_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub method: String,
    pub per_sample: Vec<SampleScore>,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
}

impl MetricReport {
    pub fn from_samples(task: impl Into<String>, method: impl Into<String>, per_sample: Vec<SampleScore>) -> Result<Self> {
        let psnr = aggregate(&per_sample.iter().map(|s| s.psnr_db).collect::<Vec<_>>())?;
        let ssim = aggregate(&per_sample.iter().map(|s| s.ssim_percent).collect::<Vec<_>>())?;
        Ok(Self {
            task: task.into(),
            method: method.into(),
            per_sample,
            psnr,
            ssim,
        })
    }
}

/// Renders non-finite floats as `"inf"`, `"-inf"` or `"nan"` so the JSON
/// stays valid; finite values stay plain numbers.
pub mod float_or_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(tag(*v))
        }
    }

    pub fn tag(v: f64) -> &'static str {
        if v.is_nan() {
            "nan"
        } else if v > 0.0 {
            "inf"
        } else {
            "-inf"
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float tag {other:?}"))),
            },
        }
    }
}
