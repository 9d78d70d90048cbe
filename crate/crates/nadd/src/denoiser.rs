//! The denoiser abstraction used by the solvers: either the exact mixture
//! posterior mean or a small trained network with skip/output preconditioning.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::GaussianMixture;
use crate::schedule::TimeGrid;
use crate::{Error, Result, Sample};

/// Skip/output scaling coefficients parameterized by the data scale.
///
/// `c_skip = sd^2/(s^2+sd^2)`, `c_out = s*sd/sqrt(s^2+sd^2)`,
/// `c_in = 1/sqrt(s^2+sd^2)`; at `s = 0` the denoiser reduces to the
/// identity (`c_skip = 1`, `c_out = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub sigma_data: f64,
}

impl Preconditioning {
    pub fn new(sigma_data: f64) -> Result<Self> {
        if !(sigma_data > 0.0) {
            return Err(Error::invalid("sigma_data must be positive"));
        }
        Ok(Preconditioning { sigma_data })
    }

    pub fn c_skip(&self, sigma: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / (sigma * sigma + sd2)
    }

    pub fn c_out(&self, sigma: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sigma * self.sigma_data / (sigma * sigma + sd2).sqrt()
    }

    pub fn c_in(&self, sigma: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        1.0 / (sigma * sigma + sd2).sqrt()
    }
}

/// Fully connected tanh network with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniNetwork {
    /// Layer sizes including input and output, e.g. [d+1, 32, 32, d].
    dims: Vec<usize>,
    /// Row-major weight matrices, one per layer transition.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    seed: u64,
}

impl MiniNetwork {
    pub fn init(dims: Vec<usize>, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("network needs >= 2 non-empty layers"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let scale = (2.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MiniNetwork {
            dims,
            weights,
            biases,
            seed,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Forward pass, optionally retaining per-layer activations for backprop.
    fn forward_full(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        let last = self.dims.len() - 2;
        for l in 0..self.dims.len() - 1 {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let a = &acts[l];
            let mut z = self.biases[l].clone();
            for o in 0..n_out {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                z[o] += row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>();
            }
            if l != last {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_full(input).pop().unwrap()
    }

    /// Backprop of `dL/d(output)` into parameter gradients, accumulated into
    /// `gw`/`gb` (same shapes as weights/biases).
    fn backward(
        &self,
        acts: &[Vec<f64>],
        mut delta: Vec<f64>,
        gw: &mut [Vec<f64>],
        gb: &mut [Vec<f64>],
    ) {
        for l in (0..self.dims.len() - 1).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let a = &acts[l];
            for o in 0..n_out {
                gb[l][o] += delta[o];
                for i in 0..n_in {
                    gw[l][o * n_in + i] += delta[o] * a[i];
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    prev[i] += delta[o] * row[i];
                }
            }
            // a[l] holds tanh outputs for hidden layers.
            for i in 0..n_in {
                prev[i] *= 1.0 - a[i] * a[i];
            }
            delta = prev;
        }
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let mut k = idx;
        for w in &mut self.weights {
            if k < w.len() {
                return &mut w[k];
            }
            k -= w.len();
        }
        for b in &mut self.biases {
            if k < b.len() {
                return &mut b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range");
    }

    fn grad_at<'g>(gw: &'g [Vec<f64>], gb: &'g [Vec<f64>], idx: usize) -> f64 {
        let mut k = idx;
        for w in gw {
            if k < w.len() {
                return w[k];
            }
            k -= w.len();
        }
        for b in gb {
            if k < b.len() {
                return b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range");
    }
}

/// A trained network together with its preconditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedDenoiser {
    pub net: MiniNetwork,
    pub precond: Preconditioning,
    /// Data dimension; the network input is `dim + 1` (log-sigma channel).
    pub dim: usize,
}

impl LearnedDenoiser {
    fn net_input(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let c_in = self.precond.c_in(sigma);
        let mut input: Vec<f64> = x.iter().map(|v| v * c_in).collect();
        input.push(sigma.ln() / 4.0);
        input
    }

    pub fn evaluate(&self, x: &[f64], sigma: f64) -> Sample {
        if sigma == 0.0 {
            // c_out(0) = 0, so the network contributes nothing.
            return x.to_vec();
        }
        let f = self.net.forward(&self.net_input(x, sigma));
        let (cs, co) = (self.precond.c_skip(sigma), self.precond.c_out(sigma));
        x.iter().zip(&f).map(|(xi, fi)| cs * xi + co * fi).collect()
    }

    /// Denoising loss and parameter gradients on an explicit batch of
    /// `(x0, x_noisy, sigma)` triples. Exposed so the gradients can be
    /// checked against finite differences.
    pub fn loss_and_grad(
        &self,
        batch: &[(Sample, Sample, f64)],
    ) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut gw: Vec<Vec<f64>> = self.net.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.net.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut loss = 0.0;
        let m = batch.len() as f64;
        for (x0, xt, sigma) in batch {
            let input = self.net_input(xt, *sigma);
            let acts = self.net.forward_full(&input);
            let f = acts.last().unwrap();
            let (cs, co) = (self.precond.c_skip(*sigma), self.precond.c_out(*sigma));
            let mut delta = vec![0.0; self.dim];
            for j in 0..self.dim {
                let d = cs * xt[j] + co * f[j] - x0[j];
                loss += d * d / m;
                delta[j] = 2.0 * d * co / m;
            }
            self.net.backward(&acts, delta, &mut gw, &mut gb);
        }
        (loss, gw, gb)
    }

    pub fn loss_on(&self, batch: &[(Sample, Sample, f64)]) -> f64 {
        self.loss_and_grad(batch).0
    }

    /// Finite-difference gradient of the batch loss at one flat parameter
    /// index; the oracle for [`Self::loss_and_grad`].
    pub fn fd_grad(&self, batch: &[(Sample, Sample, f64)], idx: usize, h: f64) -> f64 {
        let mut plus = self.clone();
        *plus.net.param_mut(idx) += h;
        let mut minus = self.clone();
        *minus.net.param_mut(idx) -= h;
        (plus.loss_on(batch) - minus.loss_on(batch)) / (2.0 * h)
    }

    pub fn analytic_grad(&self, batch: &[(Sample, Sample, f64)], idx: usize) -> f64 {
        let (_, gw, gb) = self.loss_and_grad(batch);
        MiniNetwork::grad_at(&gw, &gb, idx)
    }
}

/// The D_theta handle passed to solvers.
#[derive(Debug, Clone)]
pub enum Denoiser {
    Exact(GaussianMixture),
    Learned(LearnedDenoiser),
}

impl Denoiser {
    pub fn dim(&self) -> usize {
        match self {
            Denoiser::Exact(m) => m.dim(),
            Denoiser::Learned(l) => l.dim,
        }
    }

    pub fn evaluate(&self, x: &[f64], sigma: f64) -> Sample {
        match self {
            Denoiser::Exact(m) => m.denoise(x, sigma),
            Denoiser::Learned(l) => l.evaluate(x, sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sigma_data: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![32, 32],
            steps: 20_000,
            batch_size: 32,
            learning_rate: 5e-3,
            sigma_data: 0.5,
            seed: 0,
        }
    }
}

/// Train a denoiser on the L2 denoising objective with `t` drawn
/// log-uniform over `[t_min, t_max]` and plain fixed-step SGD.
pub fn train(
    mix: &GaussianMixture,
    grid: &TimeGrid,
    cfg: &TrainConfig,
) -> Result<(LearnedDenoiser, f64)> {
    if cfg.steps == 0 {
        return Err(Error::invalid("training needs at least one step"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let d = mix.dim();
    let mut dims = vec![d + 1];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(d);
    let mut den = LearnedDenoiser {
        net: MiniNetwork::init(dims, cfg.seed)?,
        precond: Preconditioning::new(cfg.sigma_data)?,
        dim: d,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD15E_A5E5);
    let (lo, hi) = (grid.t_min().ln(), grid.t_max().ln());
    let mut final_loss = 0.0;
    for step in 0..cfg.steps {
        let batch: Vec<(Sample, Sample, f64)> = (0..cfg.batch_size)
            .map(|_| {
                let x0 = mix.sample_one(&mut rng);
                let sigma = (lo + rng.random::<f64>() * (hi - lo)).exp();
                let xt: Vec<f64> = x0
                    .iter()
                    .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (x0, xt, sigma)
            })
            .collect();
        let (loss, gw, gb) = den.loss_and_grad(&batch);
        if !loss.is_finite() {
            return Err(Error::TrainingFailure { step });
        }
        for (w, g) in den.net.weights.iter_mut().zip(&gw) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= cfg.learning_rate * gi;
            }
        }
        for (b, g) in den.net.biases.iter_mut().zip(&gb) {
            for (bi, gi) in b.iter_mut().zip(g) {
                *bi -= cfg.learning_rate * gi;
            }
        }
        final_loss = loss;
    }
    Ok((den, final_loss))
}

const WEIGHTS_MAGIC: &[u8; 4] = b"NADW";
const WEIGHTS_VERSION: u32 = 1;

impl LearnedDenoiser {
    /// Persist as a flat binary array with a small header
    /// (magic, version, dim, sigma_data, seed, layer widths, then params LE).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(WEIGHTS_MAGIC)?;
        f.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        f.write_all(&(self.dim as u32).to_le_bytes())?;
        f.write_all(&self.precond.sigma_data.to_le_bytes())?;
        f.write_all(&self.net.seed.to_le_bytes())?;
        f.write_all(&(self.net.dims.len() as u32).to_le_bytes())?;
        for &d in &self.net.dims {
            f.write_all(&(d as u32).to_le_bytes())?;
        }
        for w in &self.net.weights {
            for v in w {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        for b in &self.net.biases {
            for v in b {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|message| Error::WeightsFormat {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Decode the weights format from raw bytes. Must reject malformed
    /// input without panicking; exercised by the fuzz targets.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        struct Cursor<'a>(&'a [u8]);
        impl<'a> Cursor<'a> {
            fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
                if self.0.len() < n {
                    return Err("truncated".into());
                }
                let (head, tail) = self.0.split_at(n);
                self.0 = tail;
                Ok(head)
            }
            fn u32(&mut self) -> std::result::Result<u32, String> {
                Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
            }
            fn u64(&mut self) -> std::result::Result<u64, String> {
                Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            }
            fn f64(&mut self) -> std::result::Result<f64, String> {
                Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            }
        }
        let mut c = Cursor(bytes);
        if c.take(4)? != WEIGHTS_MAGIC {
            return Err("bad magic".into());
        }
        let version = c.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let dim = c.u32()? as usize;
        let sigma_data = c.f64()?;
        if !(sigma_data > 0.0) || !sigma_data.is_finite() {
            return Err("sigma_data must be positive and finite".into());
        }
        let seed = c.u64()?;
        let n_layers = c.u32()? as usize;
        if !(2..=64).contains(&n_layers) {
            return Err(format!("implausible layer count {n_layers}"));
        }
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let d = c.u32()? as usize;
            if d == 0 || d > 4096 {
                return Err(format!("implausible layer width {d}"));
            }
            dims.push(d);
        }
        if dims[0] != dim + 1 || *dims.last().unwrap() != dim {
            return Err("layer widths inconsistent with dim".into());
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..n_layers - 1 {
            let n = dims[l]
                .checked_mul(dims[l + 1])
                .ok_or("layer size overflow")?;
            let mut w = Vec::with_capacity(n);
            for _ in 0..n {
                let v = c.f64()?;
                if !v.is_finite() {
                    return Err("non-finite weight".into());
                }
                w.push(v);
            }
            weights.push(w);
        }
        for l in 0..n_layers - 1 {
            let mut b = Vec::with_capacity(dims[l + 1]);
            for _ in 0..dims[l + 1] {
                let v = c.f64()?;
                if !v.is_finite() {
                    return Err("non-finite bias".into());
                }
                b.push(v);
            }
            biases.push(b);
        }
        if !c.0.is_empty() {
            return Err("trailing bytes".into());
        }
        Ok(LearnedDenoiser {
            net: MiniNetwork {
                dims,
                weights,
                biases,
                seed,
            },
            precond: Preconditioning { sigma_data },
            dim,
        })
    }

}
