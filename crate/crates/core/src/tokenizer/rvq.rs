//! Residual vector quantization with EMA codebooks.

use super::TokenSequence;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// `Nq` stages of `K × D` entries with their EMA statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebooks {
    /// One `K × D` tensor per stage.
    pub entries: Vec<Tensor>,
    /// EMA cluster counts, `Nq × K`.
    pub counts: Vec<Vec<f64>>,
    /// EMA cluster sums, one `K × D` row-major buffer per stage.
    pub sums: Vec<Vec<f64>>,
    /// Hits per entry since the last epoch boundary.
    pub hits: Vec<Vec<u64>>,
    /// When set, entry 0 of every stage after the first is held at zero,
    /// so a stage can always leave the residual as it is.
    pub pinned_zero: bool,
}

/// Codebook indices for a quantized sequence, `T × Nq`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedSequence {
    pub indices: Vec<Vec<usize>>,
    pub codebook_size: usize,
}

/// Per-stage inputs (running residuals) and chosen indices from one
/// quantize call; consumed by [`Codebooks::update_ema`].
#[derive(Clone, Debug, Default)]
pub struct Assignments {
    /// `Nq` entries, each a list of `(index, residual)` pairs.
    pub stages: Vec<Vec<(usize, Vec<f64>)>>,
}

impl Assignments {
    pub fn extend(&mut self, other: Assignments) {
        if self.stages.is_empty() {
            self.stages = other.stages;
            return;
        }
        for (a, b) in self.stages.iter_mut().zip(other.stages) {
            a.extend(b);
        }
    }

    pub fn num_frames(&self) -> usize {
        self.stages.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug)]
pub struct Quantized {
    pub codes: QuantizedSequence,
    /// Sum of the chosen entries, `T × D`.
    pub zhat: Tensor,
    /// Residual energy summed over frames after each stage.
    pub residual_energies: Vec<f64>,
    pub assignments: Assignments,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codebooks {
    /// Builds codebooks from explicit entries; EMA state starts at count 1
    /// with sums equal to the entries.
    pub fn from_entries(entries: Vec<Tensor>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::Config("at least one codebook stage is required".into()));
        };
        let (k, d) = (first.rows(), first.cols());
        if k == 0 || d == 0 {
            return Err(Error::Config("codebooks must be non-empty".into()));
        }
        for e in &entries {
            if e.shape() != [k, d] {
                return Err(Error::Config(format!(
                    "codebook stages disagree: {:?} vs {:?}",
                    e.shape(),
                    [k, d]
                )));
            }
            if !e.all_finite() {
                return Err(Error::NonFinite { op: "codebooks" });
            }
        }
        let nq = entries.len();
        let entries: Vec<Tensor> = entries.into_iter().map(|e| e.with_requires_grad(false)).collect();
        Ok(Self {
            counts: vec![vec![1.0; k]; nq],
            sums: entries.iter().map(|e| e.data().to_vec()).collect(),
            hits: vec![vec![0; k]; nq],
            entries,
            pinned_zero: false,
        })
    }

    /// Zeroes entry 0 of stages after the first and keeps it there.
    /// Guarantees residual energy never grows from one stage to the next.
    pub fn with_pinned_zero(mut self) -> Self {
        let d = self.dim();
        for s in 1..self.num_stages() {
            self.entries[s].data_mut()[..d].fill(0.0);
            self.sums[s][..d].fill(0.0);
        }
        self.pinned_zero = true;
        self
    }

    fn is_pinned(&self, stage: usize, j: usize) -> bool {
        self.pinned_zero && stage > 0 && j == 0
    }

    pub fn random(nq: usize, k: usize, d: usize, std: f64, rng: &mut Rng) -> Self {
        let entries = (0..nq).map(|_| Tensor::randn(&[k, d], std, rng)).collect();
        Self::from_entries(entries).expect("valid shapes").with_pinned_zero()
    }

    /// Seeds stage `i` from residuals of `samples` after quantizing with
    /// stages `< i`, drawing entries uniformly with replacement.
    pub fn init_from_samples(nq: usize, k: usize, samples: &[Vec<f64>], rng: &mut Rng) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("codebook init needs at least one sample".into()));
        }
        let d = samples[0].len();
        let mut residuals: Vec<Vec<f64>> = samples.to_vec();
        let mut entries = Vec::with_capacity(nq);
        for _ in 0..nq {
            let mut data = Vec::with_capacity(k * d);
            for _ in 0..k {
                data.extend_from_slice(&residuals[rng.below(residuals.len())]);
            }
            if !entries.is_empty() {
                data[..d].fill(0.0);
            }
            let table = Tensor::new(vec![k, d], data)?;
            for r in residuals.iter_mut() {
                let j = nearest(&table, r);
                r.iter_mut().zip(table.row(j)).for_each(|(a, b)| *a -= b);
            }
            entries.push(table);
        }
        Ok(Self::from_entries(entries)?.with_pinned_zero())
    }

    pub fn num_stages(&self) -> usize {
        self.entries.len()
    }

    pub fn codebook_size(&self) -> usize {
        self.entries[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].cols()
    }

    /// Nearest-entry residual quantization of every frame of `z` (`T × D`).
    pub fn quantize(&self, z: &Tensor) -> Result<Quantized> {
        if z.shape().len() != 2 || z.cols() != self.dim() {
            return Err(Error::Config(format!(
                "token dim {:?} does not match codebook dim {}",
                z.shape(),
                self.dim()
            )));
        }
        let (t, d, nq) = (z.rows(), self.dim(), self.num_stages());
        let mut indices = vec![Vec::with_capacity(nq); t];
        let mut zhat = vec![0.0; t * d];
        let mut energies = vec![0.0; nq];
        let mut stages = vec![Vec::with_capacity(t); nq];
        for f in 0..t {
            let mut r = z.row(f).to_vec();
            for (s, table) in self.entries.iter().enumerate() {
                let j = nearest(table, &r);
                stages[s].push((j, r.clone()));
                indices[f].push(j);
                for ((acc, res), e) in zhat[f * d..(f + 1) * d].iter_mut().zip(r.iter_mut()).zip(table.row(j)) {
                    *acc += e;
                    *res -= e;
                }
                energies[s] += r.iter().map(|x| x * x).sum::<f64>();
            }
        }
        Ok(Quantized {
            codes: QuantizedSequence {
                indices,
                codebook_size: self.codebook_size(),
            },
            zhat: Tensor::new(vec![t, d], zhat)?,
            residual_energies: energies,
            assignments: Assignments { stages },
        })
    }

    /// Sum of entries named by `codes`, `T × D`.
    pub fn lookup(&self, codes: &QuantizedSequence) -> Result<Tensor> {
        let (d, k) = (self.dim(), self.codebook_size());
        let mut out = vec![0.0; codes.indices.len() * d];
        for (f, frame) in codes.indices.iter().enumerate() {
            if frame.len() != self.num_stages() {
                return Err(Error::Config(format!(
                    "frame {f} has {} indices, expected {}",
                    frame.len(),
                    self.num_stages()
                )));
            }
            for (s, &j) in frame.iter().enumerate() {
                if j >= k {
                    return Err(Error::Config(format!("index {j} out of range for K={k}")));
                }
                let row = self.entries[s].row(j);
                out[f * d..(f + 1) * d].iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
        Tensor::new(vec![codes.indices.len(), d], out)
    }

    /// One EMA step: `n ← γn + (1−γ)·count`, `m ← γm + (1−γ)·Σr`, entry = m/n.
    ///
    /// Only entries hit in this batch move, and only while their count
    /// exceeds `eps`. An empty assignment set leaves everything untouched.
    pub fn update_ema(&mut self, assignments: &Assignments, decay: f64, eps: f64) {
        if assignments.num_frames() == 0 {
            return;
        }
        let (k, d) = (self.codebook_size(), self.dim());
        for (s, stage) in assignments.stages.iter().enumerate().take(self.num_stages()) {
            let mut cnt = vec![0.0; k];
            let mut sum = vec![0.0; k * d];
            for (j, r) in stage {
                cnt[*j] += 1.0;
                self.hits[s][*j] += 1;
                sum[j * d..(j + 1) * d].iter_mut().zip(r).for_each(|(a, b)| *a += b);
            }
            let entries = self.entries[s].data_mut();
            let pinned = self.pinned_zero && s > 0;
            for j in 0..k {
                let n = decay * self.counts[s][j] + (1.0 - decay) * cnt[j];
                self.counts[s][j] = n;
                if pinned && j == 0 {
                    continue;
                }
                for c in 0..d {
                    let m = &mut self.sums[s][j * d + c];
                    *m = decay * *m + (1.0 - decay) * sum[j * d + c];
                    if cnt[j] > 0.0 && n > eps {
                        entries[j * d + c] = *m / n;
                    }
                }
            }
        }
    }

    /// Fraction of entries hit since the last epoch boundary, per stage.
    pub fn usage(&self) -> Vec<f64> {
        self.hits
            .iter()
            .map(|h| h.iter().filter(|&&c| c > 0).count() as f64 / h.len() as f64)
            .collect()
    }

    /// End-of-epoch maintenance: entries whose EMA count is below
    /// `threshold` are replaced by a randomly drawn residual from the same
    /// stage, and hit counters reset. Returns the number reseeded per stage.
    pub fn reseed_dead(&mut self, assignments: &Assignments, threshold: f64, rng: &mut Rng) -> Vec<usize> {
        let d = self.dim();
        let mut reseeded = vec![0; self.num_stages()];
        for s in 0..self.num_stages() {
            let pool = assignments.stages.get(s).map_or(&[][..], Vec::as_slice);
            for j in 0..self.codebook_size() {
                if self.counts[s][j] >= threshold || pool.is_empty() || self.is_pinned(s, j) {
                    continue;
                }
                let r = &pool[rng.below(pool.len())].1;
                self.entries[s].data_mut()[j * d..(j + 1) * d].copy_from_slice(r);
                self.sums[s][j * d..(j + 1) * d].copy_from_slice(r);
                self.counts[s][j] = 1.0;
                reseeded[s] += 1;
            }
            self.hits[s].iter_mut().for_each(|h| *h = 0);
        }
        reseeded
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(Tensor::all_finite) && self.counts.iter().flatten().all(|c| c.is_finite() && *c >= 0.0)
    }

    /// Flattened tensors for checkpointing: entries and counts.
    pub fn to_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (s, e) in self.entries.iter().enumerate() {
            out.push((format!("{prefix}entries.{s}"), e.clone()));
            out.push((format!("{prefix}counts.{s}"), Tensor::vector(self.counts[s].clone())));
            let sums = Tensor::new(e.shape().to_vec(), self.sums[s].clone()).expect("same shape");
            out.push((format!("{prefix}sums.{s}"), sums));
        }
        let pinned = if self.pinned_zero { 1.0 } else { 0.0 };
        out.push((format!("{prefix}pinned_zero"), Tensor::scalar(pinned)));
        out
    }

    pub fn from_tensors(nq: usize, lookup: impl Fn(&str) -> Option<Tensor>, prefix: &str) -> Result<Self> {
        let get = |n: String| lookup(&n).ok_or_else(|| Error::Checkpoint(format!("missing {n}")));
        let mut entries = Vec::with_capacity(nq);
        let mut counts = Vec::with_capacity(nq);
        let mut sums = Vec::with_capacity(nq);
        for s in 0..nq {
            entries.push(get(format!("{prefix}entries.{s}"))?);
            counts.push(get(format!("{prefix}counts.{s}"))?.into_data());
            sums.push(get(format!("{prefix}sums.{s}"))?.into_data());
        }
        let mut cb = Self::from_entries(entries)?;
        cb.pinned_zero = lookup(&format!("{prefix}pinned_zero")).is_some_and(|t| t.item() != 0.0);
        if counts.iter().any(|c| c.len() != cb.codebook_size()) {
            return Err(Error::Checkpoint("codebook counts have the wrong length".into()));
        }
        cb.counts = counts;
        cb.sums = sums;
        Ok(cb)
    }
}

fn nearest(table: &Tensor, r: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for j in 0..table.rows() {
        let d = sq_dist(table.row(j), r);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Quantizes a token sequence; returns codes, the straight-through value ẑ
/// as a token sequence, and per-stage residual energies.
pub fn rvq_quantize(z: &TokenSequence, cb: &Codebooks) -> Result<(QuantizedSequence, TokenSequence, Vec<f64>)> {
    let q = cb.quantize(&z.tokens)?;
    let zhat = TokenSequence {
        tokens: q.zhat,
        token_rate_hz: z.token_rate_hz,
        source_sample_rate: z.source_sample_rate,
    };
    Ok((q.codes, zhat, q.residual_energies))
}

pub fn rvq_update_ema(cb: &mut Codebooks, assignments: &Assignments, decay: f64, eps: f64) {
    cb.update_ema(assignments, decay, eps);
}

impl Tape {
    /// Forward value `value`, backward identity into `z`.
    pub fn straight_through(&mut self, z: Var, value: Tensor) -> Result<Var> {
        if self.shape(z) != value.shape() {
            return Err(Error::shape(
                "straight_through",
                format!("{:?} vs {:?}", self.shape(z), value.shape()),
            ));
        }
        Ok(self.custom(value, vec![z], Box::new(|g, _, _| vec![Some(g.to_vec())])))
    }
}
