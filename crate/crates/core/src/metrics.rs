//! Distances between two weight snapshots of the same model.
//!
//! The primary measure is the symmetric KL divergence between softmaxed
//! parameter tensors, averaged over tensors with a `1/(2L)` factor. L2 and
//! `1 - cos` are provided for comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One flattened parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub values: Vec<f64>,
}

/// Flattened trainable parameters of a model at one step, in model order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub step: u64,
    pub layers: Vec<Layer>,
}

impl WeightSnapshot {
    pub fn new(step: u64, layers: Vec<Layer>) -> Result<Self> {
        let snap = WeightSnapshot { step, layers };
        snap.validate()?;
        Ok(snap)
    }

    /// Builds a snapshot from single-precision tensors.
    pub fn from_f32<'a>(
        step: u64,
        layers: impl IntoIterator<Item = (&'a str, &'a [f32])>,
    ) -> Result<Self> {
        let layers = layers
            .into_iter()
            .map(|(name, v)| Layer {
                name: name.to_string(),
                values: v.iter().map(|&x| f64::from(x)).collect(),
            })
            .collect();
        Self::new(step, layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("snapshot has no layers"));
        }
        for layer in &self.layers {
            if layer.values.is_empty() {
                return Err(Error::invalid(format!("layer `{}` is empty", layer.name)));
            }
            if layer.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "layer `{}` has non-finite values",
                    layer.name
                )));
            }
        }
        Ok(())
    }

    /// Both snapshots restricted to the layers that are non-zero in both.
    pub fn without_zero_layers(&self, other: &WeightSnapshot) -> Result<(WeightSnapshot, WeightSnapshot)> {
        self.check_same_structure(other)?;
        let nonzero = |l: &Layer| l.values.iter().any(|v| *v != 0.0);
        let (a, b): (Vec<Layer>, Vec<Layer>) = self
            .layers
            .iter()
            .zip(&other.layers)
            .filter(|(a, b)| nonzero(a) && nonzero(b))
            .map(|(a, b)| (a.clone(), b.clone()))
            .unzip();
        if a.is_empty() {
            return Err(Error::DegenerateInput("every layer is zero in one of the snapshots".into()));
        }
        Ok((
            WeightSnapshot { step: self.step, layers: a },
            WeightSnapshot { step: other.step, layers: b },
        ))
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    fn check_same_structure(&self, other: &WeightSnapshot) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::invalid(format!(
                "snapshots have {} and {} layers",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.name != b.name || a.values.len() != b.values.len() {
                return Err(Error::invalid(format!(
                    "layer mismatch: `{}`[{}] vs `{}`[{}]",
                    a.name,
                    a.values.len(),
                    b.name,
                    b.values.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    SymmetricKl,
    L2,
    InverseCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    AllLayers,
    /// Only the final tensor in snapshot order.
    LastLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricKind {
    pub distance: Distance,
    pub scope: Scope,
}

impl MetricKind {
    pub const fn new(distance: Distance, scope: Scope) -> Self {
        MetricKind { distance, scope }
    }

    /// Symmetric KL over every tensor.
    pub const fn default_kl() -> Self {
        MetricKind::new(Distance::SymmetricKl, Scope::AllLayers)
    }

    pub fn all() -> [MetricKind; 6] {
        use Distance::*;
        use Scope::*;
        [
            MetricKind::new(SymmetricKl, AllLayers),
            MetricKind::new(SymmetricKl, LastLayer),
            MetricKind::new(L2, AllLayers),
            MetricKind::new(L2, LastLayer),
            MetricKind::new(InverseCosine, AllLayers),
            MetricKind::new(InverseCosine, LastLayer),
        ]
    }

    pub fn label(&self) -> String {
        let d = match self.distance {
            Distance::SymmetricKl => "kl",
            Distance::L2 => "l2",
            Distance::InverseCosine => "inv_cos",
        };
        let s = match self.scope {
            Scope::AllLayers => "all",
            Scope::LastLayer => "last",
        };
        format!("{d}_{s}")
    }
}

impl Default for MetricKind {
    fn default() -> Self {
        Self::default_kl()
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid("empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite value"));
    }
    Ok(())
}

fn log_softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    v.iter().map(|&x| x - lse).collect()
}

/// Numerically stable `log(softmax(v))`.
pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    check_finite(v)?;
    Ok(log_softmax_unchecked(v))
}

pub fn softmax_normalize(v: &[f64]) -> Result<Vec<f64>> {
    check_finite(v)?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// KL divergence with the input given as log-probabilities, in the
/// `kl_div(input, target)` convention: `sum target * (log target - input)`.
///
/// Both arguments are log-probabilities; entries with zero target mass
/// contribute nothing.
pub fn kl_div_log(log_input: &[f64], log_target: &[f64]) -> f64 {
    log_input
        .iter()
        .zip(log_target)
        .map(|(&li, &lt)| {
            let t = lt.exp();
            if t == 0.0 {
                0.0
            } else {
                t * (lt - li)
            }
        })
        .sum()
}

fn symmetric_kl_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let la = log_softmax_unchecked(a);
    let lb = log_softmax_unchecked(b);
    (kl_div_log(&la, &lb) + kl_div_log(&lb, &la)).max(0.0)
}

/// `KL(P||Q) + KL(Q||P)` for `P = softmax(a)`, `Q = softmax(b)`.
pub fn symmetric_kl(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    check_finite(a)?;
    check_finite(b)?;
    Ok(symmetric_kl_unchecked(a, b))
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (y - x) * (y - x))
        .sum::<f64>()
        .sqrt()
}

fn inverse_cosine(a: &[f64], b: &[f64], name: &str) -> Result<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput(format!(
            "zero vector in layer `{name}` under inverse-cosine"
        )));
    }
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    Ok((1.0 - cos).max(0.0))
}

/// Average variation between two snapshots under `metric`.
pub fn weight_variation(
    prev: &WeightSnapshot,
    curr: &WeightSnapshot,
    metric: MetricKind,
) -> Result<f64> {
    prev.validate()?;
    curr.validate()?;
    prev.check_same_structure(curr)?;

    let pairs: Vec<(&Layer, &Layer)> = match metric.scope {
        Scope::AllLayers => prev.layers.iter().zip(&curr.layers).collect(),
        Scope::LastLayer => vec![(
            prev.layers.last().expect("validated non-empty"),
            curr.layers.last().expect("validated non-empty"),
        )],
    };
    let n = pairs.len() as f64;

    let value = match metric.distance {
        Distance::SymmetricKl => {
            let total: f64 = pairs
                .iter()
                .map(|(p, c)| symmetric_kl_unchecked(&p.values, &c.values))
                .sum();
            total / (2.0 * n)
        }
        Distance::L2 => {
            pairs
                .iter()
                .map(|(p, c)| l2_distance(&p.values, &c.values))
                .sum::<f64>()
                / n
        }
        Distance::InverseCosine => {
            let mut total = 0.0;
            for (p, c) in &pairs {
                total += inverse_cosine(&p.values, &c.values, &p.name)?;
            }
            total / n
        }
    };
    Ok(value)
}

/// Trailing mean: element `j` averages the last `min(j + 1, window)` inputs.
pub fn rolling_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid("rolling window must be >= 1"));
    }
    Ok((0..series.len())
        .map(|j| {
            let start = (j + 1).saturating_sub(window);
            let slice = &series[start..=j];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}
