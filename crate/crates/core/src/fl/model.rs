//! MLP parameter block: flat weight storage with a fixed, documented layout.
//!
//! For hidden width `H` (input 784, 10 classes) the flat vector holds, in
//! order:
//!
//! | segment | length  | meaning                                         |
//! |---------|---------|-------------------------------------------------|
//! | w1      | 784·H   | input→hidden weights, input-major (`w1[i·H+j]`) |
//! | b1      | H       | hidden bias                                     |
//! | w2      | H·10    | hidden→output weights, hidden-major             |
//! | b2      | 10      | output bias                                     |
//!
//! Total `d = 784·H + H + H·10 + 10`. The canonical byte form — the thing
//! model digests and chain payloads are computed over — is the hidden width
//! as `u32` little-endian followed by every weight as little-endian `f64` in
//! storage order. That layout is platform-independent by construction.

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::distributions::Uniform;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::data::idx::IMAGE_DIM;
use crate::data::CLASSES;
use crate::error::{Error, Result};
use crate::{rng, Float};

/// Flat parameter count for a given hidden width.
pub fn param_count(hidden: usize) -> usize {
    IMAGE_DIM * hidden + hidden + hidden * CLASSES + CLASSES
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    hidden: usize,
    weights: Vec<F>,
}

impl<F: Float> ModelParams<F> {
    /// All-zero model. Useful as a baseline: its softmax is uniform, so its
    /// loss is exactly ln(10) and its argmax is always class 0.
    pub fn zeros(hidden: usize) -> Self {
        assert!(hidden >= 1, "hidden width must be at least 1");
        Self {
            hidden,
            weights: vec![F::zero(); param_count(hidden)],
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a model always has parameters (hidden >= 1)
    }

    pub fn as_slice(&self) -> &[F] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.weights
    }

    /// Reject models carrying NaN or infinite weights. Models cross client
    /// boundaries as bytes, so inference entry points call this instead of
    /// trusting the sender; a NaN behind the ReLU would otherwise pass
    /// silently (`max(NaN, 0) = 0`) and poison the aggregate.
    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        for (i, w) in self.weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite {
                    what: "model weight",
                    context: format!("{context}, coordinate {i}"),
                });
            }
        }
        Ok(())
    }

    fn seg(&self) -> (usize, usize, usize) {
        let h = self.hidden;
        let b1 = IMAGE_DIM * h;
        let w2 = b1 + h;
        let b2 = w2 + h * CLASSES;
        (b1, w2, b2)
    }

    /// Input→hidden weights as a `784 × H` view.
    pub fn w1(&self) -> ArrayView2<'_, F> {
        let (b1, _, _) = self.seg();
        ArrayView2::from_shape((IMAGE_DIM, self.hidden), &self.weights[..b1]).expect("layout")
    }

    /// Hidden bias.
    pub fn b1(&self) -> &[F] {
        let (b1, w2, _) = self.seg();
        &self.weights[b1..w2]
    }

    /// Hidden→output weights as an `H × 10` view.
    pub fn w2(&self) -> ArrayView2<'_, F> {
        let (_, w2, b2) = self.seg();
        ArrayView2::from_shape((self.hidden, CLASSES), &self.weights[w2..b2]).expect("layout")
    }

    /// Output bias.
    pub fn b2(&self) -> &[F] {
        let (_, _, b2) = self.seg();
        &self.weights[b2..]
    }

    pub fn w1_mut(&mut self) -> ArrayViewMut2<'_, F> {
        let (b1, _, _) = self.seg();
        let h = self.hidden;
        ArrayViewMut2::from_shape((IMAGE_DIM, h), &mut self.weights[..b1]).expect("layout")
    }

    pub fn b1_mut(&mut self) -> &mut [F] {
        let (b1, w2, _) = self.seg();
        &mut self.weights[b1..w2]
    }

    pub fn w2_mut(&mut self) -> ArrayViewMut2<'_, F> {
        let (_, w2, b2) = self.seg();
        let h = self.hidden;
        ArrayViewMut2::from_shape((h, CLASSES), &mut self.weights[w2..b2]).expect("layout")
    }

    pub fn b2_mut(&mut self) -> &mut [F] {
        let (_, _, b2) = self.seg();
        &mut self.weights[b2..]
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Euclidean distance to another model of the same shape.
    pub fn l2_distance(&self, other: &Self) -> Result<F> {
        if self.hidden != other.hidden {
            return Err(Error::Shape(format!(
                "hidden {} vs {}",
                self.hidden, other.hidden
            )));
        }
        let mut acc = F::zero();
        for (a, b) in self.weights.iter().zip(&other.weights) {
            let d = *a - *b;
            acc += d * d;
        }
        Ok(acc.sqrt())
    }
}

/// Fresh model: weights uniform in `±1/√fan_in` per layer (fan-in 784 for
/// w1, H for w2), biases zero. Draws come from the `"init"` stream of `seed`
/// in storage order (w1 fully, then w2), so the result is bit-reproducible.
pub fn init_model<F: Float>(hidden: usize, seed: u64) -> ModelParams<F> {
    let mut m = ModelParams::zeros(hidden);
    let mut r = rng::stream(seed, "init", 0);

    let bound1 = F::lit(1.0 / (IMAGE_DIM as f64).sqrt());
    let dist1 = Uniform::new_inclusive(-bound1, bound1);
    {
        let (b1, _, _) = m.seg();
        for w in &mut m.weights[..b1] {
            *w = r.sample(&dist1);
        }
    }

    let bound2 = F::lit(1.0 / (hidden as f64).sqrt());
    let dist2 = Uniform::new_inclusive(-bound2, bound2);
    {
        let (_, w2, b2) = m.seg();
        for w in &mut m.weights[w2..b2] {
            *w = r.sample(&dist2);
        }
    }
    m
}

impl ModelParams<f64> {
    /// Canonical little-endian byte form (see module docs). This is the
    /// payload uploaded to the cache pool and the input to [`Self::digest`].
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.weights.len());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Parse canonical bytes, validating length and finiteness.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Shape("model bytes shorter than header".into()));
        }
        let hidden = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if hidden == 0 {
            return Err(Error::Shape("hidden width 0".into()));
        }
        let d = param_count(hidden);
        if bytes.len() != 4 + 8 * d {
            return Err(Error::Shape(format!(
                "model bytes: {} for hidden {}, expected {}",
                bytes.len(),
                hidden,
                4 + 8 * d
            )));
        }
        let weights: Vec<f64> = bytes[4..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let m = Self { hidden, weights };
        if !m.all_finite() {
            return Err(Error::NonFinite {
                what: "weight",
                context: "model deserialization".into(),
            });
        }
        Ok(m)
    }

    /// SHA-256 over the canonical bytes.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }

    pub fn digest_hex(&self) -> String {
        crate::util::to_hex(&self.digest())
    }
}
