//! Dual-codebook pose tokenizer machinery.
//!
//! The neural encoder and decoder live elsewhere; everything here operates on
//! caller-supplied latents (`S × d`) and token logits (`S × M`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::body_model::PoseParams;
use crate::rotations::matrix_to_6d;
use crate::{Error, Result};

const CODEBOOK_MAGIC: &[u8; 7] = b"AMPCB01";

/// Usage below this is treated as empty during EMA re-estimation.
pub const USAGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    NonAmp,
    Amp,
}

impl CodebookKind {
    fn to_byte(self) -> u8 {
        match self {
            CodebookKind::NonAmp => 0,
            CodebookKind::Amp => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(CodebookKind::NonAmp),
            1 => Ok(CodebookKind::Amp),
            _ => Err(Error::schema(format!("unknown codebook kind byte {b}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    codes: DMatrix<f64>,
    usage: DVector<f64>,
    ema_sum: DMatrix<f64>,
    kind: CodebookKind,
}

impl Codebook {
    /// Fresh codebook with unit usage per code.
    pub fn new(codes: DMatrix<f64>, kind: CodebookKind) -> Result<Self> {
        let usage = DVector::from_element(codes.nrows(), 1.0);
        let ema_sum = codes.clone();
        Self::from_parts(codes, ema_sum, usage, kind)
    }

    pub fn from_parts(
        codes: DMatrix<f64>,
        ema_sum: DMatrix<f64>,
        usage: DVector<f64>,
        kind: CodebookKind,
    ) -> Result<Self> {
        if codes.nrows() == 0 || codes.ncols() == 0 {
            return Err(Error::invalid("codebook needs M >= 1 and d >= 1"));
        }
        if ema_sum.shape() != codes.shape() || usage.len() != codes.nrows() {
            return Err(Error::dims("codebook parts disagree on shape"));
        }
        let finite = codes.iter().chain(ema_sum.iter()).chain(usage.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("codebook has non-finite entries"));
        }
        if usage.iter().any(|&u| u < 0.0) {
            return Err(Error::invalid("codebook usage must be non-negative"));
        }
        Ok(Codebook {
            codes,
            usage,
            ema_sum,
            kind,
        })
    }

    /// Seeded codebook with entries uniform in `[-1, 1)`.
    pub fn random(m: usize, d: usize, kind: CodebookKind, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
        Self::new(codes, kind)
    }

    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.codes.ncols()
    }

    pub fn codes(&self) -> &DMatrix<f64> {
        &self.codes
    }

    pub fn usage(&self) -> &DVector<f64> {
        &self.usage
    }

    pub fn ema_sum(&self) -> &DMatrix<f64> {
        &self.ema_sum
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    /// EMA re-estimation from one batch of assignments.
    ///
    /// Codes without assignments keep their value (their usage and running sum
    /// decay by the same factor, so the ratio is unchanged).
    pub fn ema_update(&mut self, z: &LatentTokens, indices: &[usize], gamma: f64) -> Result<()> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("EMA decay {gamma} outside [0, 1)")));
        }
        let zm = z.matrix();
        if zm.ncols() != self.dim() || indices.len() != zm.nrows() {
            return Err(Error::dims("latents and indices disagree with the codebook"));
        }
        let m = self.len();
        if let Some(bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::invalid(format!("code index {bad} out of range")));
        }
        let mut counts = vec![0.0; m];
        let mut sums = DMatrix::zeros(m, self.dim());
        for (row, &idx) in indices.iter().enumerate() {
            counts[idx] += 1.0;
            let mut dst = sums.row_mut(idx);
            dst += zm.row(row);
        }
        for k in 0..m {
            self.usage[k] = gamma * self.usage[k] + (1.0 - gamma) * counts[k];
            for c in 0..self.dim() {
                self.ema_sum[(k, c)] = gamma * self.ema_sum[(k, c)] + (1.0 - gamma) * sums[(k, c)];
            }
            if counts[k] > 0.0 && self.usage[k] > USAGE_EPS {
                for c in 0..self.dim() {
                    self.codes[(k, c)] = self.ema_sum[(k, c)] / self.usage[k];
                }
            }
        }
        Ok(())
    }

    /// Replaces every code whose usage is below `threshold` by a latent row
    /// drawn with a seeded generator. Returns the replaced code indices.
    pub fn reset_dead_codes(
        &mut self,
        z: &LatentTokens,
        threshold: f64,
        seed: u64,
    ) -> Result<Vec<usize>> {
        let zm = z.matrix();
        if zm.ncols() != self.dim() {
            return Err(Error::dims("latent width differs from code width"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut replaced = Vec::new();
        for k in 0..self.len() {
            if self.usage[k] < threshold {
                let pick = rng.random_range(0..zm.nrows());
                self.codes.row_mut(k).copy_from(&zm.row(pick));
                self.ema_sum.row_mut(k).copy_from(&zm.row(pick));
                self.usage[k] = 1.0;
                replaced.push(k);
            }
        }
        Ok(replaced)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&binio::read_all(File::open(path)?)?)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CODEBOOK_MAGIC)?;
        binio::write_u32(w, self.len() as u32)?;
        binio::write_u32(w, self.dim() as u32)?;
        w.write_all(&[self.kind.to_byte()])?;
        binio::write_f64s(w, &row_major(&self.codes))?;
        binio::write_f64s(w, &row_major(&self.ema_sum))?;
        binio::write_f64s(w, self.usage.as_slice())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CODEBOOK_MAGIC)?;
        let m = r.u32()? as usize;
        let d = r.u32()? as usize;
        let kind = CodebookKind::from_byte(r.u8()?)?;
        let codes = DMatrix::from_row_slice(m, d, &r.f64s(m * d)?);
        let ema_sum = DMatrix::from_row_slice(m, d, &r.f64s(m * d)?);
        let usage = DVector::from_vec(r.f64s(m)?);
        r.finish()?;
        Codebook::from_parts(codes, ema_sum, usage, kind).map_err(|e| Error::schema(e.to_string()))
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// `S × d` latent tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTokens(DMatrix<f64>);

impl LatentTokens {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() == 0 {
            return Err(Error::invalid("need at least one token"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite latent"));
        }
        Ok(LatentTokens(z))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::dims("ragged latent rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), d, &flat))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn num_tokens(&self) -> usize {
        self.0.nrows()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// `S × M` logits over codebook entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogits(DMatrix<f64>);

impl TokenLogits {
    pub fn new(logits: DMatrix<f64>) -> Result<Self> {
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite token logit"));
        }
        Ok(TokenLogits(logits))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub indices: Vec<usize>,
    pub z_tilde: DMatrix<f64>,
}

/// Nearest code per token under the Euclidean norm, ties to the lowest index.
pub fn quantize(z: &LatentTokens, cb: &Codebook) -> Result<Quantized> {
    let zm = z.matrix();
    if zm.ncols() != cb.dim() {
        return Err(Error::dims(format!(
            "latent width {} differs from code width {}",
            zm.ncols(),
            cb.dim()
        )));
    }
    let codes = cb.codes();
    let indices: Vec<usize> = zm
        .row_iter()
        .map(|zi| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (m, c) in codes.row_iter().enumerate() {
                let d: f64 = zi.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = m;
                }
            }
            best
        })
        .collect();
    let mut z_tilde = DMatrix::zeros(zm.nrows(), cb.dim());
    for (i, &m) in indices.iter().enumerate() {
        z_tilde.row_mut(i).copy_from(&codes.row(m));
    }
    Ok(Quantized { indices, z_tilde })
}

/// Row-wise softmax of the logits times the code matrix.
pub fn soft_decode(t: &TokenLogits, cb: &Codebook) -> Result<LatentTokens> {
    let logits = t.matrix();
    if logits.ncols() != cb.len() {
        return Err(Error::dims(format!(
            "{} logits per token for {} codes",
            logits.ncols(),
            cb.len()
        )));
    }
    let mut weights = logits.clone();
    for mut row in weights.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let total = row.sum();
        row /= total;
    }
    LatentTokens::new(weights * cb.codes())
}

/// Decodes against the amputee codebook when any limb is predicted amputated.
pub fn switch_and_decode(
    t: &TokenLogits,
    y_hat: &[u8; 4],
    cb_amp: &Codebook,
    cb_non: &Codebook,
) -> Result<(LatentTokens, CodebookKind)> {
    if cb_amp.kind() != CodebookKind::Amp || cb_non.kind() != CodebookKind::NonAmp {
        return Err(Error::Config(
            "switching needs one amp and one non_amp codebook".into(),
        ));
    }
    let cb = if y_hat.iter().map(|&y| y as u32).sum::<u32>() > 0 {
        cb_amp
    } else {
        cb_non
    };
    Ok((soft_decode(t, cb)?, cb.kind()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerLossWeights {
    pub mix: f64,
    pub codebook: f64,
    pub commitment: f64,
}

impl Default for TokenizerLossWeights {
    fn default() -> Self {
        TokenizerLossWeights {
            mix: 100.0,
            codebook: 1.0,
            commitment: 1.0,
        }
    }
}

/// Reconstructed or ground-truth targets of the mixed loss.
#[derive(Debug, Clone)]
pub struct PoseTargets<'a> {
    pub vertices: &'a [nalgebra::Vector3<f64>],
    pub joints: &'a [nalgebra::Vector3<f64>],
    pub pose: &'a PoseParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TokenizerLoss {
    pub total: f64,
    pub mix: f64,
    pub codebook: f64,
    pub commitment: f64,
}

fn mse<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    let (sum, n) = a
        .zip(b)
        .fold((0.0, 0usize), |(s, n), (x, y)| (s + (x - y) * (x - y), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Weighted reconstruction, codebook and commitment terms.
///
/// The mixed term is the sum of per-element mean squared errors over
/// vertices, joints and the 6D pose. The codebook and commitment terms are
/// numerically the same quantity; they differ only in where gradients stop.
pub fn tokenizer_loss(
    z: &LatentTokens,
    z_tilde: &DMatrix<f64>,
    recon: &PoseTargets<'_>,
    gt: &PoseTargets<'_>,
    weights: &TokenizerLossWeights,
    reduction: Reduction,
) -> Result<TokenizerLoss> {
    if z.matrix().shape() != z_tilde.shape() {
        return Err(Error::dims("latents and quantized latents differ in shape"));
    }
    if recon.vertices.len() != gt.vertices.len() || recon.joints.len() != gt.joints.len() {
        return Err(Error::dims("reconstruction and ground truth differ in size"));
    }
    let six_d = |p: &PoseParams| -> Result<Vec<f64>> {
        p.rotations
            .iter()
            .map(|r| matrix_to_6d(r).map(|x| x.to_array()))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.concat())
    };
    let pose_r = six_d(recon.pose)?;
    let pose_g = six_d(gt.pose)?;
    let mix = mse(
        recon.vertices.iter().flat_map(|v| v.iter()),
        gt.vertices.iter().flat_map(|v| v.iter()),
    ) + mse(
        recon.joints.iter().flat_map(|v| v.iter()),
        gt.joints.iter().flat_map(|v| v.iter()),
    ) + mse(pose_r.iter(), pose_g.iter());

    let mut quad = (z.matrix() - z_tilde).norm_squared();
    if reduction == Reduction::Mean {
        quad /= z_tilde.len() as f64;
    }
    let codebook = quad;
    let commitment = quad;
    Ok(TokenizerLoss {
        total: weights.mix * mix + weights.codebook * codebook + weights.commitment * commitment,
        mix,
        codebook,
        commitment,
    })
}
