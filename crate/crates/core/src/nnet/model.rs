use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{conv_geoms, ConvGeom, EncoderConfig, ParamLayout, ParamSpec, Real};
use crate::error::{AsdError, Result};
use crate::features::MelMatrix;

/// Samples per gradient-accumulation chunk. Fixed so the reduction order, and
/// therefore the result, does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

/// `n` single-channel `frames x mels` inputs, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub frames: usize,
    pub mels: usize,
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn new(frames: usize, mels: usize, data: Vec<T>) -> Result<Self> {
        let per = frames * mels;
        if per == 0 || data.len() % per != 0 {
            return Err(AsdError::Shape(format!(
                "batch of {} values is not a multiple of {frames}x{mels}",
                data.len()
            )));
        }
        Ok(Batch {
            frames,
            mels,
            n: data.len() / per,
            data,
        })
    }

    pub fn from_matrices<'a>(mats: impl IntoIterator<Item = &'a MelMatrix>) -> Result<Self> {
        let mut data = Vec::new();
        let mut shape = None;
        for m in mats {
            match shape {
                None => shape = Some((m.frames, m.n_mels)),
                Some(s) if s != (m.frames, m.n_mels) => {
                    return Err(AsdError::Shape(format!(
                        "mixed segment shapes {:?} and {:?}",
                        s,
                        (m.frames, m.n_mels)
                    )))
                }
                _ => {}
            }
            data.extend(m.data.iter().map(|&v| T::of(v)));
        }
        let (frames, mels) = shape.ok_or_else(|| AsdError::Shape("empty batch".into()))?;
        Batch::new(frames, mels, data)
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let per = self.frames * self.mels;
        &self.data[i * per..(i + 1) * per]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub n: usize,
    pub n_ids: usize,
    pub embedding_dim: usize,
    /// `n x embedding_dim`
    pub embeddings: Vec<T>,
    /// `n x n_ids`
    pub product_logits: Vec<T>,
    pub product_probs: Vec<T>,
    pub sq_norms: Vec<T>,
    pub machine_logits: Vec<T>,
    pub machine_probs: Vec<T>,
}

impl<T: Real> ForwardOutput<T> {
    pub fn embedding(&self, i: usize) -> &[T] {
        &self.embeddings[i * self.embedding_dim..(i + 1) * self.embedding_dim]
    }

    pub fn product_row(&self, i: usize) -> &[T] {
        &self.product_probs[i * self.n_ids..(i + 1) * self.n_ids]
    }
}

/// Loss gradients with respect to the head logits.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads<T> {
    /// `n x n_ids`
    pub product_logits: Vec<T>,
    pub machine_logits: Vec<T>,
}

struct SampleOut<T> {
    emb: Vec<T>,
    prod_logits: Vec<T>,
    sq_norm: T,
    machine_logit: T,
}

struct SampleCache<T> {
    cols: Vec<Vec<T>>,
    acts: Vec<Vec<T>>,
    pooled: Vec<T>,
    hidden: Vec<T>,
    emb: Vec<T>,
    sq_norm: T,
}

struct Tape<T> {
    caches: Vec<SampleCache<T>>,
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Encoder `f` with the product head `g_product` and the norm head `g_affine`.
pub struct Encoder<T: Real> {
    cfg: EncoderConfig,
    n_ids: usize,
    geoms: Vec<ConvGeom>,
    layout: ParamLayout,
    params: Vec<T>,
    tape: Option<Tape<T>>,
}

impl<T: Real> Clone for Encoder<T> {
    fn clone(&self) -> Self {
        Encoder {
            cfg: self.cfg.clone(),
            n_ids: self.n_ids,
            geoms: self.geoms.clone(),
            layout: self.layout.clone(),
            params: self.params.clone(),
            tape: None,
        }
    }
}

impl<T: Real> std::fmt::Debug for Encoder<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder")
            .field("dtype", &T::NAME)
            .field("n_ids", &self.n_ids)
            .field("n_params", &self.params.len())
            .field("cfg", &self.cfg)
            .finish()
    }
}

fn im2col<T: Real>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_len();
    let k = g.kernel;
    let mut cols = vec![T::zero(); g.rows() * p];
    for c in 0..g.in_c {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let row = &mut cols[r * p..(r + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src = &input[(c * g.in_h + iy as usize) * g.in_w..][..g.in_w];
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_len();
    let k = g.kernel;
    let mut out = vec![T::zero(); g.in_len()];
    for c in 0..g.in_c {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let row = &cols[r * p..(r + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut out[(c * g.in_h + iy as usize) * g.in_w..][..g.in_w];
                    let src = &row[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

impl<T: Real> Encoder<T> {
    pub fn new(cfg: EncoderConfig, n_ids: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n_ids == 0 {
            return Err(AsdError::Config("product head needs at least one id".into()));
        }
        let geoms = conv_geoms(&cfg);
        let layout = ParamLayout::new(&cfg, &geoms, n_ids);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |offset: usize, len: usize, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut params[offset..offset + len] {
                *v = T::of(normal.sample(&mut rng));
            }
        };
        for (l, g) in geoms.iter().enumerate() {
            fill(layout.conv_w[l], g.out_c * g.rows(), (2.0 / g.rows() as f64).sqrt());
        }
        let last_c = geoms.last().unwrap().out_c;
        fill(layout.dense1_w, cfg.head_hidden * last_c, (2.0 / last_c as f64).sqrt());
        fill(layout.dense2_w, cfg.embedding_dim * cfg.head_hidden, (1.0 / cfg.head_hidden as f64).sqrt());
        fill(layout.prod_w, n_ids * cfg.embedding_dim, (1.0 / cfg.embedding_dim as f64).sqrt());
        Ok(Encoder {
            cfg,
            n_ids,
            geoms,
            layout,
            params,
            tape: None,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn n_ids(&self) -> usize {
        self.n_ids
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(AsdError::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn param_name(&self, index: usize) -> String {
        self.layout.name_of(index)
    }

    /// Offset of the norm-head `(a, b)` pair in the parameter vector.
    pub fn norm_affine_offset(&self) -> usize {
        self.layout.affine
    }

    pub fn cast<U: Real>(&self) -> Encoder<U> {
        Encoder {
            cfg: self.cfg.clone(),
            n_ids: self.n_ids,
            geoms: self.geoms.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|&v| U::of(v.f64())).collect(),
            tape: None,
        }
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        if batch.frames != self.cfg.input_frames || batch.mels != self.cfg.input_mels {
            return Err(AsdError::Shape(format!(
                "encoder expects {}x{} inputs, got {}x{}",
                self.cfg.input_frames, self.cfg.input_mels, batch.frames, batch.mels
            )));
        }
        if batch.n == 0 {
            return Err(AsdError::Shape("empty batch".into()));
        }
        Ok(())
    }

    fn input_channels(&self, x: &[T]) -> Vec<T> {
        let mut input = x.to_vec();
        if self.cfg.coord_channel {
            let mels = self.cfg.input_mels;
            let denom = (mels.max(2) - 1) as f64;
            let ramp: Vec<T> = (0..mels).map(|m| T::of(2.0 * m as f64 / denom - 1.0)).collect();
            for _ in 0..self.cfg.input_frames {
                input.extend_from_slice(&ramp);
            }
        }
        input
    }

    fn forward_sample(&self, x: &[T], keep: bool) -> (SampleOut<T>, Option<SampleCache<T>>) {
        let p = &self.params;
        let act_fn = self.cfg.activation;
        let mut cols_keep = Vec::new();
        let mut acts_keep = Vec::new();
        let mut act = self.input_channels(x);
        for (l, g) in self.geoms.iter().enumerate() {
            let cols = im2col(&act, g);
            let (rows, len) = (g.rows(), g.out_len());
            let w = &p[self.layout.conv_w[l]..][..g.out_c * rows];
            let b = &p[self.layout.conv_b[l]..][..g.out_c];
            let mut out = vec![T::zero(); g.out_c * len];
            for (oc, orow) in out.chunks_exact_mut(len).enumerate() {
                orow.fill(b[oc]);
                for (r, &wv) in w[oc * rows..(oc + 1) * rows].iter().enumerate() {
                    axpy(wv, &cols[r * len..(r + 1) * len], orow);
                }
                for v in orow.iter_mut() {
                    *v = act_fn.apply(*v);
                }
            }
            if keep {
                cols_keep.push(cols);
                acts_keep.push(out.clone());
            }
            act = out;
        }
        let last = self.geoms.last().unwrap();
        let len = last.out_len();
        let inv_len = T::of(1.0 / len as f64);
        let pooled: Vec<T> = act.chunks_exact(len).map(|c| c.iter().copied().sum::<T>() * inv_len).collect();

        let hid = self.cfg.head_hidden;
        let dim = self.cfg.embedding_dim;
        let c_last = last.out_c;
        let w1 = &p[self.layout.dense1_w..][..hid * c_last];
        let b1 = &p[self.layout.dense1_b..][..hid];
        let hidden: Vec<T> = (0..hid)
            .map(|j| act_fn.apply(b1[j] + dot(&w1[j * c_last..(j + 1) * c_last], &pooled)))
            .collect();
        let w2 = &p[self.layout.dense2_w..][..dim * hid];
        let b2 = &p[self.layout.dense2_b..][..dim];
        let emb: Vec<T> = (0..dim).map(|i| b2[i] + dot(&w2[i * hid..(i + 1) * hid], &hidden)).collect();

        let k = self.n_ids;
        let wp = &p[self.layout.prod_w..][..k * dim];
        let bp = &p[self.layout.prod_b..][..k];
        let prod_logits: Vec<T> = (0..k).map(|j| bp[j] + dot(&wp[j * dim..(j + 1) * dim], &emb)).collect();
        let sq_norm = dot(&emb, &emb);
        let (a, b) = (p[self.layout.affine], p[self.layout.affine + 1]);
        let machine_logit = a * sq_norm + b;

        let cache = keep.then(|| SampleCache {
            cols: cols_keep,
            acts: acts_keep,
            pooled,
            hidden,
            emb: emb.clone(),
            sq_norm,
        });
        (
            SampleOut {
                emb,
                prod_logits,
                sq_norm,
                machine_logit,
            },
            cache,
        )
    }

    fn assemble(&self, outs: Vec<SampleOut<T>>) -> ForwardOutput<T> {
        let n = outs.len();
        let mut fo = ForwardOutput {
            n,
            n_ids: self.n_ids,
            embedding_dim: self.cfg.embedding_dim,
            embeddings: Vec::with_capacity(n * self.cfg.embedding_dim),
            product_logits: Vec::with_capacity(n * self.n_ids),
            product_probs: Vec::with_capacity(n * self.n_ids),
            sq_norms: Vec::with_capacity(n),
            machine_logits: Vec::with_capacity(n),
            machine_probs: Vec::with_capacity(n),
        };
        for o in outs {
            fo.embeddings.extend_from_slice(&o.emb);
            fo.product_probs.extend(o.prod_logits.iter().map(|&z| sigmoid(z)));
            fo.product_logits.extend_from_slice(&o.prod_logits);
            fo.sq_norms.push(o.sq_norm);
            fo.machine_logits.push(o.machine_logit);
            fo.machine_probs.push(sigmoid(o.machine_logit));
        }
        fo
    }

    /// Inference forward pass; keeps no activations.
    pub fn forward(&self, batch: &Batch<T>) -> Result<ForwardOutput<T>> {
        self.check_batch(batch)?;
        let outs: Vec<_> = (0..batch.n)
            .into_par_iter()
            .map(|i| self.forward_sample(batch.sample(i), false).0)
            .collect();
        Ok(self.assemble(outs))
    }

    /// Forward pass that retains activations for a following [`Encoder::backward`].
    pub fn forward_train(&mut self, batch: &Batch<T>) -> Result<ForwardOutput<T>> {
        self.check_batch(batch)?;
        let (outs, caches): (Vec<_>, Vec<_>) = (0..batch.n)
            .into_par_iter()
            .map(|i| {
                let (o, c) = self.forward_sample(batch.sample(i), true);
                (o, c.expect("cache requested"))
            })
            .unzip();
        self.tape = Some(Tape { caches });
        Ok(self.assemble(outs))
    }

    /// Parameter gradients of a loss whose gradients with respect to the head
    /// logits are `grads`. Consumes the activations of the last training forward.
    pub fn backward(&mut self, grads: &OutputGrads<T>) -> Result<Vec<T>> {
        let tape = self.tape.take().ok_or(AsdError::BackwardWithoutForward)?;
        let n = tape.caches.len();
        if grads.product_logits.len() != n * self.n_ids || grads.machine_logits.len() != n {
            return Err(AsdError::Shape(format!(
                "output gradients sized for {} samples, tape holds {n}",
                grads.machine_logits.len()
            )));
        }
        let total = self.layout.total;
        let partials: Vec<Vec<T>> = tape
            .caches
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut g = vec![T::zero(); total];
                for (j, cache) in chunk.iter().enumerate() {
                    let i = ci * GRAD_CHUNK + j;
                    let dpl = &grads.product_logits[i * self.n_ids..(i + 1) * self.n_ids];
                    self.backward_sample(cache, dpl, grads.machine_logits[i], &mut g);
                }
                g
            })
            .collect();
        let mut out = vec![T::zero(); total];
        for g in &partials {
            for (o, &v) in out.iter_mut().zip(g) {
                *o += v;
            }
        }
        Ok(out)
    }

    fn backward_sample(&self, c: &SampleCache<T>, dpl: &[T], dml: T, g: &mut [T]) {
        let p = &self.params;
        let lay = &self.layout;
        let act_fn = self.cfg.activation;
        let dim = self.cfg.embedding_dim;
        let hid = self.cfg.head_hidden;
        let k = self.n_ids;
        let a = p[lay.affine];

        g[lay.affine] += dml * c.sq_norm;
        g[lay.affine + 1] += dml;

        let two_a_dml = T::of(2.0) * a * dml;
        let mut de: Vec<T> = c.emb.iter().map(|&e| two_a_dml * e).collect();
        let wp = &p[lay.prod_w..][..k * dim];
        for (j, &d) in dpl.iter().enumerate() {
            axpy(d, &wp[j * dim..(j + 1) * dim], &mut de);
            axpy(d, &c.emb, &mut g[lay.prod_w + j * dim..lay.prod_w + (j + 1) * dim]);
            g[lay.prod_b + j] += d;
        }

        let w2 = &p[lay.dense2_w..][..dim * hid];
        let mut dh = vec![T::zero(); hid];
        for (i, &d) in de.iter().enumerate() {
            axpy(d, &c.hidden, &mut g[lay.dense2_w + i * hid..lay.dense2_w + (i + 1) * hid]);
            g[lay.dense2_b + i] += d;
            axpy(d, &w2[i * hid..(i + 1) * hid], &mut dh);
        }
        for (d, &h) in dh.iter_mut().zip(&c.hidden) {
            *d *= act_fn.grad_from_output(h);
        }

        let last = self.geoms.last().unwrap();
        let c_last = last.out_c;
        let w1 = &p[lay.dense1_w..][..hid * c_last];
        let mut dpool = vec![T::zero(); c_last];
        for (j, &d) in dh.iter().enumerate() {
            axpy(d, &c.pooled, &mut g[lay.dense1_w + j * c_last..lay.dense1_w + (j + 1) * c_last]);
            g[lay.dense1_b + j] += d;
            axpy(d, &w1[j * c_last..(j + 1) * c_last], &mut dpool);
        }

        let n_layers = self.geoms.len();
        let len = last.out_len();
        let inv_len = T::of(1.0 / len as f64);
        let mut dout: Vec<T> = Vec::with_capacity(c_last * len);
        for (ch, &dp) in dpool.iter().enumerate() {
            let scaled = dp * inv_len;
            let out = &c.acts[n_layers - 1][ch * len..(ch + 1) * len];
            dout.extend(out.iter().map(|&y| scaled * act_fn.grad_from_output(y)));
        }

        for l in (0..n_layers).rev() {
            let geo = &self.geoms[l];
            let (rows, len) = (geo.rows(), geo.out_len());
            let cols = &c.cols[l];
            let w = &p[lay.conv_w[l]..][..geo.out_c * rows];
            let gw = lay.conv_w[l];
            for oc in 0..geo.out_c {
                let drow = &dout[oc * len..(oc + 1) * len];
                g[lay.conv_b[l] + oc] += drow.iter().copied().sum::<T>();
                for r in 0..rows {
                    g[gw + oc * rows + r] += dot(drow, &cols[r * len..(r + 1) * len]);
                }
            }
            if l == 0 {
                break;
            }
            let mut dcols = vec![T::zero(); rows * len];
            for oc in 0..geo.out_c {
                let drow = &dout[oc * len..(oc + 1) * len];
                for (r, &wv) in w[oc * rows..(oc + 1) * rows].iter().enumerate() {
                    axpy(wv, drow, &mut dcols[r * len..(r + 1) * len]);
                }
            }
            let mut din = col2im(&dcols, geo);
            for (d, &y) in din.iter_mut().zip(&c.acts[l - 1]) {
                *d *= act_fn.grad_from_output(y);
            }
            dout = din;
        }
    }
}
