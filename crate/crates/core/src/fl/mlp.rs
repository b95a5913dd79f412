//! Forward/backward passes, SGD, local training, evaluation.
//!
//! The network is fixed-shape: 784 → H (ReLU) → 10 (softmax), cross-entropy
//! loss. Batches run through preallocated workspaces and ndarray matmul; all
//! reductions are in fixed order, so identical inputs produce identical bits
//! on a given build. Softmax subtracts the row max before exponentiating
//! (standard overflow guard; exact for the all-zero model, whose loss is
//! ln 10).

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use super::model::ModelParams;
use crate::data::idx::IMAGE_DIM;
use crate::data::{Shard, CLASSES};
use crate::error::{Error, Result};
use crate::Float;

/// Chunk rows for whole-set passes (evaluation, full-shard loss).
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug)]
pub struct TrainOpts<F> {
    /// Local iterations: full passes over the shard (each pass is a seeded
    /// shuffle followed by mini-batch SGD steps).
    pub tau: u32,
    pub eta: F,
    pub batch_size: usize,
    /// Simulated time one pass costs; only the report does arithmetic on it.
    pub alpha: F,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainReport<F> {
    pub iterations_run: u32,
    /// Mean loss over the whole shard after the last update.
    pub final_local_loss: F,
    /// `iterations_run · alpha`, exactly.
    pub wall_iterations_cost: F,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalReport<F> {
    pub loss: F,
    pub accuracy: F,
}

/// Scratch buffers reused across mini-batches.
struct Workspace<F> {
    x: Array2<F>,
    z1: Array2<F>,
    logits: Array2<F>,
    dz1: Array2<F>,
}

impl<F: Float> Workspace<F> {
    fn new(rows: usize, hidden: usize) -> Self {
        Self {
            x: Array2::zeros((rows, IMAGE_DIM)),
            z1: Array2::zeros((rows, hidden)),
            logits: Array2::zeros((rows, CLASSES)),
            dz1: Array2::zeros((rows, hidden)),
        }
    }
}

fn check_batch<F: Float>(images: &ArrayView2<F>, labels: &[u8], what: &'static str) -> Result<()> {
    if images.nrows() == 0 {
        return Err(Error::Empty(what));
    }
    if images.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} images vs {} labels",
            images.nrows(),
            labels.len()
        )));
    }
    if images.ncols() != IMAGE_DIM {
        return Err(Error::Shape(format!(
            "batch width {} != {IMAGE_DIM}",
            images.ncols()
        )));
    }
    if labels.iter().any(|&l| l as usize >= CLASSES) {
        return Err(Error::Dataset("label outside 0..10 in batch".into()));
    }
    Ok(())
}

/// `z1 = relu(x·w1 + b1)`, `logits = z1·w2 + b2` over the first `b` rows.
fn forward_into<F: Float>(m: &ModelParams<F>, ws: &mut Workspace<F>, b: usize) {
    let mut z1 = ws.z1.slice_mut(s![..b, ..]);
    general_mat_mul(F::one(), &ws.x.slice(s![..b, ..]), &m.w1(), F::zero(), &mut z1);
    let b1 = m.b1();
    for mut row in z1.rows_mut() {
        for (v, &bias) in row.iter_mut().zip(b1) {
            *v = (*v + bias).max(F::zero());
        }
    }

    let mut logits = ws.logits.slice_mut(s![..b, ..]);
    general_mat_mul(F::one(), &ws.z1.slice(s![..b, ..]), &m.w2(), F::zero(), &mut logits);
    let b2 = m.b2();
    for mut row in logits.rows_mut() {
        for (v, &bias) in row.iter_mut().zip(b2) {
            *v += bias;
        }
    }
}

/// Per-row softmax cross-entropy. Returns the summed loss; rewrites the
/// logit rows into probabilities (consumed by the backward pass).
fn softmax_ce_into<F: Float>(ws: &mut Workspace<F>, labels: &[u8], b: usize) -> F {
    let mut loss_sum = F::zero();
    for (row, &label) in ws.logits.slice_mut(s![..b, ..]).rows_mut().into_iter().zip(labels) {
        let row = row.into_slice().expect("contiguous logits");
        let mut mx = row[0];
        for &v in &row[1..] {
            if v > mx {
                mx = v;
            }
        }
        let shifted_y = row[label as usize] - mx;
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        loss_sum += sum.ln() - shifted_y;
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    loss_sum
}

/// Summed loss and correct-prediction count straight from logits (no
/// mutation; evaluation path). Argmax ties resolve to the lowest class.
fn eval_rows<F: Float>(logits: ArrayView2<'_, F>, labels: &[u8]) -> (F, usize) {
    let mut loss_sum = F::zero();
    let mut correct = 0usize;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        let mut mx = row[0];
        let mut arg = 0usize;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > mx {
                mx = v;
                arg = j;
            }
        }
        let mut sum = F::zero();
        for &v in row.iter() {
            sum += (v - mx).exp();
        }
        loss_sum = loss_sum + sum.ln() - (row[label as usize] - mx);
        if arg == label as usize {
            correct += 1;
        }
    }
    (loss_sum, correct)
}

/// Backward pass for one batch; `ws.logits` must hold probabilities and
/// `ws.z1` the post-ReLU activations. Writes the mean-loss gradient.
fn backward_into<F: Float>(
    m: &ModelParams<F>,
    ws: &mut Workspace<F>,
    labels: &[u8],
    b: usize,
    grad: &mut ModelParams<F>,
) {
    let inv_b = F::one() / F::from_usize(b).expect("batch size fits");

    // dz2 = (probs − onehot)/b, in place.
    for (mut row, &label) in ws.logits.slice_mut(s![..b, ..]).rows_mut().into_iter().zip(labels) {
        row[label as usize] -= F::one();
        for v in row.iter_mut() {
            *v *= inv_b;
        }
    }

    let dz2 = ws.logits.slice(s![..b, ..]);
    let a1 = ws.z1.slice(s![..b, ..]);

    // gw2 = a1ᵀ·dz2, gb2 = column sums of dz2.
    general_mat_mul(F::one(), &a1.t(), &dz2, F::zero(), &mut grad.w2_mut());
    let gb2 = grad.b2_mut();
    for v in gb2.iter_mut() {
        *v = F::zero();
    }
    for row in dz2.rows() {
        for (g, &v) in gb2.iter_mut().zip(row) {
            *g += v;
        }
    }

    // dz1 = (dz2·w2ᵀ) ⊙ relu'(z1); relu' read off the activations.
    let mut dz1 = ws.dz1.slice_mut(s![..b, ..]);
    general_mat_mul(F::one(), &dz2, &m.w2().t(), F::zero(), &mut dz1);
    for (mut drow, arow) in dz1.rows_mut().into_iter().zip(a1.rows()) {
        for (d, &a) in drow.iter_mut().zip(arow) {
            if a <= F::zero() {
                *d = F::zero();
            }
        }
    }

    // gw1 = xᵀ·dz1, gb1 = column sums of dz1.
    let dz1 = ws.dz1.slice(s![..b, ..]);
    general_mat_mul(
        F::one(),
        &ws.x.slice(s![..b, ..]).t(),
        &dz1,
        F::zero(),
        &mut grad.w1_mut(),
    );
    let gb1 = grad.b1_mut();
    for v in gb1.iter_mut() {
        *v = F::zero();
    }
    for row in dz1.rows() {
        for (g, &v) in gb1.iter_mut().zip(row) {
            *g += v;
        }
    }
}

fn apply_step<F: Float>(m: &mut ModelParams<F>, grad: &ModelParams<F>, eta: F) {
    for (w, &g) in m.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *w -= eta * g;
    }
}

fn load_rows<F: Float>(ws: &mut Workspace<F>, images: &ArrayView2<F>, rows: &[usize]) {
    for (dst, &src) in rows.iter().enumerate() {
        ws.x.row_mut(dst).assign(&images.row(src));
    }
}

/// Mean cross-entropy over an arbitrary batch.
pub fn forward_loss<F: Float>(
    m: &ModelParams<F>,
    images: ArrayView2<'_, F>,
    labels: &[u8],
) -> Result<F> {
    m.check_finite("forward_loss")?;
    check_batch(&images, labels, "batch")?;
    let n = images.nrows();
    let mut ws = Workspace::new(n.min(EVAL_CHUNK), m.hidden());
    let mut loss_sum = F::zero();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        load_rows(&mut ws, &images, &idx);
        forward_into(m, &mut ws, end - start);
        let (sum, _) = eval_rows(ws.logits.slice(s![..end - start, ..]), &labels[start..end]);
        loss_sum += sum;
    }
    let loss = loss_sum / F::from_usize(n).expect("set size fits");
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            context: "forward pass".into(),
        });
    }
    Ok(loss)
}

/// Mean loss and its gradient at `m` over the given batch, without touching
/// the model. The whole batch is materialized in one workspace, so keep it
/// to shard-sized inputs.
pub fn loss_gradient<F: Float>(
    m: &ModelParams<F>,
    images: ArrayView2<'_, F>,
    labels: &[u8],
) -> Result<(F, ModelParams<F>)> {
    m.check_finite("loss_gradient")?;
    check_batch(&images, labels, "batch")?;
    let b = images.nrows();
    let mut ws = Workspace::new(b, m.hidden());
    let idx: Vec<usize> = (0..b).collect();
    load_rows(&mut ws, &images, &idx);
    forward_into(m, &mut ws, b);
    let loss_sum = softmax_ce_into(&mut ws, labels, b);
    let loss = loss_sum / F::from_usize(b).expect("batch size fits");
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            context: "loss_gradient".into(),
        });
    }
    let mut grad = ModelParams::zeros(m.hidden());
    backward_into(m, &mut ws, labels, b, &mut grad);
    Ok((loss, grad))
}

/// One SGD step on the given batch: `m ← m − eta·∇(mean CE)`. Returns the
/// pre-update batch loss.
pub fn sgd_step<F: Float>(
    m: &mut ModelParams<F>,
    images: ArrayView2<'_, F>,
    labels: &[u8],
    eta: F,
) -> Result<F> {
    check_batch(&images, labels, "batch")?;
    let b = images.nrows();
    let mut ws = Workspace::new(b, m.hidden());
    let idx: Vec<usize> = (0..b).collect();
    load_rows(&mut ws, &images, &idx);
    let mut grad = ModelParams::zeros(m.hidden());
    let loss = step_loaded(m, &mut ws, labels, b, &mut grad, eta, "sgd_step")?;
    Ok(loss)
}

/// Forward + backward + apply on rows already loaded into the workspace.
fn step_loaded<F: Float>(
    m: &mut ModelParams<F>,
    ws: &mut Workspace<F>,
    labels: &[u8],
    b: usize,
    grad: &mut ModelParams<F>,
    eta: F,
    context: &str,
) -> Result<F> {
    forward_into(m, ws, b);
    let loss_sum = softmax_ce_into(ws, labels, b);
    let loss = loss_sum / F::from_usize(b).expect("batch size fits");
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            context: context.to_string(),
        });
    }
    backward_into(m, ws, labels, b, grad);
    apply_step(m, grad, eta);
    Ok(loss)
}

/// Local training: `tau` passes over the shard in mini-batches whose order
/// comes from the caller's RNG stream (one shuffle per pass).
pub fn local_train<F: Float, R: Rng + ?Sized>(
    m: &mut ModelParams<F>,
    shard: &Shard<F>,
    opts: &TrainOpts<F>,
    rng: &mut R,
) -> Result<TrainReport<F>> {
    if opts.tau < 1 {
        return Err(Error::Config("local_train needs tau >= 1".into()));
    }
    if opts.batch_size < 1 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if shard.is_empty() {
        return Err(Error::Empty("shard"));
    }

    let n = shard.len();
    let bs = opts.batch_size.min(n);
    let mut ws = Workspace::new(bs, m.hidden());
    let mut grad = ModelParams::zeros(m.hidden());
    let mut order: Vec<usize> = (0..n).collect();
    let images = shard.images.view();

    for pass in 0..opts.tau {
        order.shuffle(rng);
        for chunk in order.chunks(bs) {
            load_rows(&mut ws, &images, chunk);
            let labels: Vec<u8> = chunk.iter().map(|&i| shard.labels[i]).collect();
            step_loaded(
                m,
                &mut ws,
                &labels,
                chunk.len(),
                &mut grad,
                opts.eta,
                &format!("local_train pass {pass}"),
            )?;
        }
    }

    if !m.all_finite() {
        return Err(Error::NonFinite {
            what: "weight",
            context: "local_train".into(),
        });
    }
    let final_local_loss = forward_loss(m, shard.images.view(), &shard.labels)?;
    let tau_f = F::from_u32(opts.tau).expect("tau fits");
    Ok(TrainReport {
        iterations_run: opts.tau,
        final_local_loss,
        wall_iterations_cost: tau_f * opts.alpha,
    })
}

/// Mean loss and argmax accuracy over a whole labeled set.
pub fn evaluate<F: Float>(
    m: &ModelParams<F>,
    images: ArrayView2<'_, F>,
    labels: &[u8],
) -> Result<EvalReport<F>> {
    m.check_finite("evaluate")?;
    check_batch(&images, labels, "test set")?;
    let n = images.nrows();
    let mut ws = Workspace::new(n.min(EVAL_CHUNK), m.hidden());
    let mut loss_sum = F::zero();
    let mut correct = 0usize;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        load_rows(&mut ws, &images, &idx);
        forward_into(m, &mut ws, end - start);
        let (sum, c) = eval_rows(ws.logits.slice(s![..end - start, ..]), &labels[start..end]);
        loss_sum += sum;
        correct += c;
    }
    let nf = F::from_usize(n).expect("set size fits");
    let loss = loss_sum / nf;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            context: "evaluate".into(),
        });
    }
    Ok(EvalReport {
        loss,
        accuracy: F::from_usize(correct).expect("count fits") / nf,
    })
}
