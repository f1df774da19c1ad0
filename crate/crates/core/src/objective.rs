//! Training objectives: the per-ID binary cross-entropy over the target
//! machine's product IDs, the machine-type binary cross-entropy on the
//! embedding-norm head, their weighted sum, mixup, and the 1:1 batch sampler.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::dataset::{Manifest, Split};
use crate::error::{AsdError, Result};
use crate::nnet::{Batch, Real};
use crate::util;

/// Probabilities entering a logarithm are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

/// Per-sample labels. `t[i]` is the target-machine weight; row `i` of `y`
/// holds the product one-hot weights scaled by the target mass (zero for
/// non-target samples). Both become fractional after mixup.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLabels {
    pub n_ids: usize,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda_mix: Vec<f64>,
}

impl BatchLabels {
    pub fn new(n_ids: usize) -> Self {
        BatchLabels {
            n_ids,
            t: Vec::new(),
            y: Vec::new(),
            lambda_mix: Vec::new(),
        }
    }

    pub fn push_target(&mut self, product_id: usize) {
        assert!(product_id < self.n_ids, "product id {product_id} out of range");
        self.t.push(1.0);
        self.y.extend((0..self.n_ids).map(|k| if k == product_id { 1.0 } else { 0.0 }));
        self.lambda_mix.push(1.0);
    }

    pub fn push_other(&mut self) {
        self.t.push(0.0);
        self.y.extend(std::iter::repeat(0.0).take(self.n_ids));
        self.lambda_mix.push(1.0);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        &self.y[i * self.n_ids..(i + 1) * self.n_ids]
    }

    /// Number of label entries (t and y) strictly between 0 and 1.
    pub fn fractional_count(&self) -> usize {
        self.t.iter().chain(&self.y).filter(|&&v| v > 0.0 && v < 1.0).count()
    }

    fn check(&self, n: usize, what: &str) -> Result<()> {
        if self.t.len() != n || self.y.len() != n * self.n_ids {
            return Err(AsdError::Shape(format!(
                "{what}: labels for {} samples x {} ids, got {n} rows",
                self.t.len(),
                self.n_ids
            )));
        }
        Ok(())
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// d/dz of -[y log c(p) + (1-y) log(1-c(p))] with p = sigmoid(z) and c the clamp.
fn bce_logit_grad(p: f64, y: f64) -> f64 {
    if p > PROB_EPS && p < 1.0 - PROB_EPS {
        p - y
    } else {
        0.0
    }
}

fn bce(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Product-ID loss and its gradient with respect to the product logits.
/// `probs` is `n x n_ids`. Errors when the batch carries no target mass.
pub fn loss_product_grad(probs: &[f64], labels: &BatchLabels) -> Result<(f64, Vec<f64>)> {
    let k = labels.n_ids;
    let n = labels.len();
    if probs.len() != n * k {
        return Err(AsdError::Shape(format!("{} product probabilities for {n}x{k} labels", probs.len())));
    }
    labels.check(n, "product loss")?;
    let mass: f64 = labels.t.iter().sum();
    if !(mass > 0.0) {
        return Err(AsdError::InvalidInput(
            "product-id loss undefined: batch has no target-machine samples".into(),
        ));
    }
    let norm = 1.0 / (k as f64 * mass);
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * k];
    for i in 0..n {
        let t = labels.t[i];
        if t == 0.0 {
            continue;
        }
        for j in 0..k {
            let (p, y) = (probs[i * k + j], labels.y[i * k + j]);
            loss += t * bce(p, y);
            grad[i * k + j] = norm * t * bce_logit_grad(p, y);
        }
    }
    Ok((loss * norm, grad))
}

pub fn loss_product(probs: &[f64], labels: &BatchLabels) -> Result<f64> {
    loss_product_grad(probs, labels).map(|(l, _)| l)
}

/// Machine-type loss on the norm head and its gradient with respect to the machine logits.
pub fn loss_machine_grad(probs: &[f64], labels: &BatchLabels) -> Result<(f64, Vec<f64>)> {
    let n = labels.len();
    if probs.len() != n || n == 0 {
        return Err(AsdError::Shape(format!("{} machine probabilities for {n} labels", probs.len())));
    }
    let inv_n = 1.0 / n as f64;
    let loss = probs.iter().zip(&labels.t).map(|(&q, &t)| bce(q, t)).sum::<f64>() * inv_n;
    let grad = probs.iter().zip(&labels.t).map(|(&q, &t)| inv_n * bce_logit_grad(q, t)).collect();
    Ok((loss, grad))
}

pub fn loss_machine(probs: &[f64], labels: &BatchLabels) -> Result<f64> {
    loss_machine_grad(probs, labels).map(|(l, _)| l)
}

pub fn loss_total(lp: f64, lm: f64, lambda: f64) -> f64 {
    lm + lambda * lp
}

/// Which terms enter the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// machine loss + lambda * product loss
    Full,
    /// lambda * product loss only; the norm head receives no gradient
    IdsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub product: f64,
    pub machine: f64,
    pub total: f64,
}

/// Evaluates the configured loss and its logit gradients.
pub fn evaluate_loss(
    product_probs: &[f64],
    machine_probs: &[f64],
    labels: &BatchLabels,
    lambda: f64,
    mode: LossMode,
) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
    let (lp, mut gp) = loss_product_grad(product_probs, labels)?;
    let (lm, mut gm) = loss_machine_grad(machine_probs, labels)?;
    gp.iter_mut().for_each(|g| *g *= lambda);
    let total = match mode {
        LossMode::Full => loss_total(lp, lm, lambda),
        LossMode::IdsOnly => {
            gm.iter_mut().for_each(|g| *g = 0.0);
            lambda * lp
        }
    };
    Ok((
        LossBreakdown {
            product: lp,
            machine: lm,
            total,
        },
        gp,
        gm,
    ))
}

/// Mixes sample `i` of `a` with sample `i` of `b` using `lambdas[i]`; labels are
/// mixed with the same coefficient.
pub fn mixup_with<T: Real>(
    a: &Batch<T>,
    la: &BatchLabels,
    b: &Batch<T>,
    lb: &BatchLabels,
    lambdas: &[f64],
) -> Result<(Batch<T>, BatchLabels)> {
    if a.frames != b.frames || a.mels != b.mels || a.n != b.n || la.n_ids != lb.n_ids {
        return Err(AsdError::Shape("mixup operands differ in shape".into()));
    }
    la.check(a.n, "mixup")?;
    lb.check(b.n, "mixup")?;
    if lambdas.len() != a.n {
        return Err(AsdError::Shape(format!("{} mixup coefficients for {} samples", lambdas.len(), a.n)));
    }
    let per = a.frames * a.mels;
    let mut data = Vec::with_capacity(a.data.len());
    for (i, &lam) in lambdas.iter().enumerate() {
        let (wa, wb) = (T::of(lam), T::of(1.0 - lam));
        data.extend(
            a.data[i * per..(i + 1) * per]
                .iter()
                .zip(&b.data[i * per..(i + 1) * per])
                .map(|(&x, &y)| wa * x + wb * y),
        );
    }
    let mix = |x: f64, y: f64, lam: f64| lam * x + (1.0 - lam) * y;
    let k = la.n_ids;
    let labels = BatchLabels {
        n_ids: k,
        t: (0..a.n).map(|i| mix(la.t[i], lb.t[i], lambdas[i])).collect(),
        y: (0..a.n * k).map(|j| mix(la.y[j], lb.y[j], lambdas[j / k])).collect(),
        lambda_mix: lambdas.to_vec(),
    };
    Ok((Batch::new(a.frames, a.mels, data)?, labels))
}

/// Mixup with per-pair coefficients drawn from Beta(alpha, alpha).
pub fn mixup<T: Real, R: Rng + ?Sized>(
    a: &Batch<T>,
    la: &BatchLabels,
    b: &Batch<T>,
    lb: &BatchLabels,
    alpha: f64,
    rng: &mut R,
) -> Result<(Batch<T>, BatchLabels)> {
    let beta = Beta::new(alpha, alpha).map_err(|e| AsdError::Config(format!("mixup alpha {alpha}: {e}")))?;
    let lambdas: Vec<f64> = (0..a.n).map(|_| beta.sample(rng)).collect();
    mixup_with(a, la, b, lb, &lambdas)
}

/// Within-batch mixup: the batch is paired with a shuffled copy of itself.
pub fn mixup_within<T: Real, R: Rng + ?Sized>(
    batch: &Batch<T>,
    labels: &BatchLabels,
    alpha: f64,
    rng: &mut R,
) -> Result<(Batch<T>, BatchLabels)> {
    let mut perm: Vec<usize> = (0..batch.n).collect();
    perm.shuffle(rng);
    let per = batch.frames * batch.mels;
    let mut data = Vec::with_capacity(batch.data.len());
    let mut other = BatchLabels::new(labels.n_ids);
    for &j in &perm {
        data.extend_from_slice(&batch.data[j * per..(j + 1) * per]);
        other.t.push(labels.t[j]);
        other.y.extend_from_slice(labels.y_row(j));
        other.lambda_mix.push(1.0);
    }
    let shuffled = Batch::new(batch.frames, batch.mels, data)?;
    mixup(batch, labels, &shuffled, &other, alpha, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledClip {
    /// Index into the manifest's records.
    pub record: usize,
    pub is_target: bool,
}

/// Emits batches with exactly half target-machine clips (stratified round-robin
/// over product IDs) and half clips drawn uniformly from the other machine types.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    per_id: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    others: Vec<usize>,
    product_ids: Vec<usize>,
    n_target: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(manifest: &Manifest, machine_type: &str, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size % 2 != 0 {
            return Err(AsdError::Config(format!("batch size must be even and positive, got {batch_size}")));
        }
        let mut per_id = vec![Vec::new(); manifest.ids_per_type];
        let mut others = Vec::new();
        for (i, r) in manifest.select(None, &[Split::Train]) {
            if r.machine_type == machine_type {
                per_id[r.product_id].push(i);
            } else {
                others.push(i);
            }
        }
        let n_target = per_id.iter().map(Vec::len).sum();
        if n_target == 0 {
            return Err(AsdError::InvalidInput(format!("no training clips for target machine {machine_type}")));
        }
        if others.is_empty() {
            return Err(AsdError::InvalidInput(format!(
                "no non-target training clips: outlier exposure for {machine_type} needs other machine types"
            )));
        }
        let mut rng = util::rng_for(seed, &[util::str_salt("sampler"), util::str_salt(machine_type)]);
        for pool in &mut per_id {
            pool.shuffle(&mut rng);
        }
        let product_ids = (0..per_id.len()).filter(|&k| !per_id[k].is_empty()).collect();
        Ok(BatchSampler {
            batch_size,
            cursors: vec![0; per_id.len()],
            per_id,
            others,
            product_ids,
            n_target,
            rng,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n_target.div_ceil(self.batch_size / 2)
    }

    fn next_of(&mut self, id: usize) -> usize {
        if self.cursors[id] == self.per_id[id].len() {
            let pool = &mut self.per_id[id];
            pool.shuffle(&mut self.rng);
            self.cursors[id] = 0;
        }
        let v = self.per_id[id][self.cursors[id]];
        self.cursors[id] += 1;
        v
    }

    /// One epoch of batches.
    pub fn epoch(&mut self) -> Vec<Vec<SampledClip>> {
        let half = self.batch_size / 2;
        let n_batches = self.batches_per_epoch();
        let ids = self.product_ids.clone();
        let targets: Vec<usize> = (0..n_batches * half).map(|j| self.next_of(ids[j % ids.len()])).collect();
        targets
            .chunks(half)
            .map(|chunk| {
                let mut batch: Vec<SampledClip> = chunk
                    .iter()
                    .map(|&record| SampledClip {
                        record,
                        is_target: true,
                    })
                    .collect();
                for _ in 0..half {
                    let record = self.others[self.rng.gen_range(0..self.others.len())];
                    batch.push(SampledClip {
                        record,
                        is_target: false,
                    });
                }
                batch
            })
            .collect()
    }
}
