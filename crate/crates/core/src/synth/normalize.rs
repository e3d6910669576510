use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Soft-tissue CT window in Hounsfield units.
pub const SOFT_TISSUE_WINDOW: [f64; 2] = [-200.0, 300.0];

/// HU windowing followed by min–max scaling of the window to `[0, 1]`.
pub fn normalize_ct(image_hu: &Tensor, window: [f64; 2]) -> Result<Tensor> {
    let [lo, hi] = window;
    if !(lo < hi) {
        return Err(Error::contract(format!("CT window [{lo}, {hi}] is empty")));
    }
    Ok(image_hu.map(|v| (v.clamp(lo, hi) - lo) / (hi - lo)))
}

/// Per-scan z-score. A (numerically) constant scan maps to all zeros.
pub fn normalize_mr(image: &Tensor) -> Tensor {
    let n = image.len() as f64;
    if image.is_empty() {
        return image.clone();
    }
    let mean = image.sum() / n;
    let var = image.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return Tensor::zeros(image.shape());
    }
    image.map(|v| (v - mean) / std)
}
