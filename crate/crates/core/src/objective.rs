//! Class-weighted multi-label binary cross-entropy on pooled class scores.

use crate::error::{config_err, Error, Result};

/// Image-level presence vector `k`, one 0/1 entry per class.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PresenceLabel(Vec<u8>);

impl PresenceLabel {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Input(format!("presence label entries must be 0 or 1, got {bad}")));
        }
        Ok(Self(bits))
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        values
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    Ok(0)
                } else if v == 1.0 {
                    Ok(1)
                } else {
                    Err(Error::Input(format!("presence label entries must be 0 or 1, got {v}")))
                }
            })
            .collect::<Result<Vec<u8>>>()
            .map(Self)
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.0[class] == 1
    }
}

/// Positive per-class loss weights `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0; num_classes])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Inverse-frequency weights normalized so a class at the mean count gets 1:
/// `W_c = mean(counts) / counts_c`.
pub fn class_weights(counts: &[u64]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(config_err("class_weights needs at least one class"));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(config_err(format!(
            "class {c} never occurs in the training split; drop the class or smooth its count"
        )));
    }
    let mean = counts.iter().map(|&n| n as f64).sum::<f64>() / counts.len() as f64;
    Ok(ClassWeights(counts.iter().map(|&n| mean / n as f64).collect()))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted BCE summed over classes and averaged over the `N` samples:
///
/// `L = sum_c -1/N sum_n [ W_c k log s(v) + (1 - k) log(1 - s(v)) ]`
///
/// Returns the loss and `dL/dv` for every score.
pub fn wbce_loss(scores: &[Vec<f64>], labels: &[PresenceLabel], weights: &ClassWeights) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::Input("wbce_loss on an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Input(format!("{n} score rows but {} label rows", labels.len())));
    }
    let c = weights.0.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(n);
    for (i, (v, k)) in scores.iter().zip(labels).enumerate() {
        if v.len() != c || k.len() != c {
            return Err(Error::Input(format!(
                "row {i}: {} scores and {} labels for {c} classes",
                v.len(),
                k.len()
            )));
        }
        let mut g = Vec::with_capacity(c);
        for ((&vc, &kc), &wc) in v.iter().zip(k.bits()).zip(&weights.0) {
            if !vc.is_finite() {
                return Err(Error::Numerical(format!("non-finite score {vc} in row {i}")));
            }
            let s = sigmoid(vc);
            if kc == 1 {
                loss += wc * softplus(-vc);
                g.push(-inv_n * wc * (1.0 - s));
            } else {
                loss += softplus(vc);
                g.push(inv_n * s);
            }
        }
        grads.push(g);
    }
    Ok((loss * inv_n, grads))
}
