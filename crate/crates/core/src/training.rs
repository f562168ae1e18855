//! Alternating adversarial training and the ablation variants.
//!
//! Every mini-batch of a RAN run does three things:
//!
//! 1. forward `X_imi -> Z_imi -> X_rec` and `X_nor -> Z` through the autoencoder;
//! 2. update the discriminator on `X_rec` (detached, labelled fake) and `X_nor`
//!    (labelled real);
//! 3. with the discriminator frozen, update the encoder and decoder on
//!    `lambda * mse(Z, Z_imi) + bce(Dx(X_rec), 1)`.
//!
//! The reduced variants swap the loss for a reconstruction error and never
//! touch the discriminator.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::{ColumnStats, Matrix};
use crate::error::{Error, Result};
use crate::imitation::{imitate, CorruptionSpec};
use crate::model::{init_params, ArchConfig, ModelParams, Network, Variant};
use crate::rng::{self, Stream};
use crate::scoring::format_sig;
use crate::tensor::{Adam, AdamConfig, Real, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the latent constraint.
    pub lambda: f64,
    /// Corrupt level used to imitate anomalies each epoch.
    pub corrupt_level: f64,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            lambda: 10.0,
            corrupt_level: 0.1,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_rows: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > n_rows {
            return bad(format!(
                "batch size {} must lie in [1, {n_rows}] (the number of training rows)",
                self.batch_size
            ));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        CorruptionSpec::new(self.corrupt_level, self.seed)?;
        self.optimizer.validate()
    }
}

/// Per-epoch batch-mean losses. Inactive terms stay zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub l_dx: Vec<f64>,
    pub l_ae: Vec<f64>,
    pub z_error: Vec<f64>,
    pub gen_loss: Vec<f64>,
}

impl LossRecord {
    pub fn epochs(&self) -> usize {
        self.l_ae.len()
    }

    pub fn is_finite(&self) -> bool {
        [&self.l_dx, &self.l_ae, &self.z_error, &self.gen_loss]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn push(&mut self, mean: StepLosses) {
        self.l_dx.push(mean.l_dx);
        self.l_ae.push(mean.l_ae);
        self.z_error.push(mean.z_error);
        self.gen_loss.push(mean.gen_loss);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,L_Dx,L_AE,Z_error,gen_loss\n");
        for i in 0..self.epochs() {
            writeln!(
                out,
                "{},{},{},{},{}",
                i + 1,
                format_sig(self.l_dx[i]),
                format_sig(self.l_ae[i]),
                format_sig(self.z_error[i]),
                format_sig(self.gen_loss[i])
            )
            .unwrap();
        }
        out
    }
}

/// Loss values of one optimisation step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub l_dx: f64,
    pub l_ae: f64,
    pub z_error: f64,
    pub gen_loss: f64,
}

impl StepLosses {
    fn is_finite(&self) -> bool {
        self.l_dx.is_finite()
            && self.l_ae.is_finite()
            && self.z_error.is_finite()
            && self.gen_loss.is_finite()
    }
}

/// Mean over the batch of `bce(d_rec, 0) + bce(d_nor, 1)`.
pub fn discriminator_loss<T: Real>(tape: &mut Tape<T>, d_rec: Var, d_nor: Var) -> Result<Var> {
    let fake = tape.bce(d_rec, T::zero())?;
    let real = tape.bce(d_nor, T::one())?;
    tape.add(fake, real)
}

/// Terms of the generator objective.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: Var,
    pub z_error: Var,
    pub gen_loss: Var,
}

/// `lambda * mse(z, z_imi) + mean bce(d_rec, 1)`.
pub fn generator_loss<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    z_imi: Var,
    d_rec: Var,
    lambda: T,
) -> Result<GeneratorLoss> {
    if !(lambda > T::zero()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let z_error = tape.mse(z, z_imi)?;
    let gen_loss = tape.bce(d_rec, T::one())?;
    let weighted = tape.scale(z_error, lambda);
    let total = tape.add(weighted, gen_loss)?;
    Ok(GeneratorLoss {
        total,
        z_error,
        gen_loss,
    })
}

/// Autoencoder forward pass on one batch, kept alive for the generator update.
pub struct GeneratorPass {
    tape: Tape<f32>,
    encoder: Vec<Var>,
    decoder: Vec<Var>,
    z: Var,
    z_imi: Var,
    x_rec: Var,
}

impl GeneratorPass {
    /// Reconstruction values, `[batch * m]`.
    pub fn reconstruction(&self) -> &[f32] {
        self.tape.value(self.x_rec).data()
    }
}

/// Owns the parameters and optimizer state of one training run.
pub struct Trainer {
    params: ModelParams,
    config: TrainConfig,
    generator_opt: Adam<f32>,
    discriminator_opt: Adam<f32>,
}

fn scalar(tape: &Tape<f32>, v: Var) -> f64 {
    f64::from(tape.value(v).data()[0])
}

impl Trainer {
    pub fn new(arch: &ArchConfig, config: &TrainConfig) -> Result<Self> {
        let params = init_params(arch, config.seed)?;
        Ok(Self::from_params(params, config))
    }

    pub fn from_params(params: ModelParams, config: &TrainConfig) -> Self {
        let generator_opt = Adam::new(config.optimizer, params.encoder.iter().chain(&params.decoder));
        let discriminator_opt = Adam::new(config.optimizer, &params.discriminator);
        Trainer {
            params,
            config: config.clone(),
            generator_opt,
            discriminator_opt,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    fn m(&self) -> usize {
        self.params.config.m
    }

    /// Encodes `x_nor` and `x_imi`, and decodes the imitated latents.
    pub fn generator_forward(&self, x_nor: &[f32], x_imi: &[f32]) -> Result<GeneratorPass> {
        let m = self.m();
        let batch = x_nor.len() / m;
        if x_nor.len() != batch * m || x_imi.len() != x_nor.len() || batch == 0 {
            return Err(Error::InvalidShape(format!(
                "batch buffers of {} and {} values for rows of length {m}",
                x_nor.len(),
                x_imi.len()
            )));
        }
        let mut tape = Tape::new();
        let encoder = self.params.bind(&mut tape, Network::Encoder, true);
        let decoder = self.params.bind(&mut tape, Network::Decoder, true);
        let xn = tape.constant(vec![batch, 1, m], x_nor.to_vec())?;
        let xi = tape.constant(vec![batch, 1, m], x_imi.to_vec())?;
        let z = self.params.encode_on(&mut tape, &encoder, xn)?;
        let z_imi = self.params.encode_on(&mut tape, &encoder, xi)?;
        let x_rec = self.params.decode_on(&mut tape, &decoder, z_imi)?;
        Ok(GeneratorPass {
            tape,
            encoder,
            decoder,
            z,
            z_imi,
            x_rec,
        })
    }

    /// One discriminator update: reconstructions are fake, normal rows real.
    /// Only discriminator parameters change.
    pub fn discriminator_step(&mut self, x_rec: &[f32], x_nor: &[f32]) -> Result<f64> {
        let m = self.m();
        let batch = x_nor.len() / m;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, Network::Discriminator, true);
        let rec = tape.constant(vec![batch, 1, m], x_rec.to_vec())?;
        let nor = tape.constant(vec![batch, 1, m], x_nor.to_vec())?;
        let d_rec = self.params.discriminate_on(&mut tape, &vars, rec)?;
        let d_nor = self.params.discriminate_on(&mut tape, &vars, nor)?;
        let loss = discriminator_loss(&mut tape, d_rec, d_nor)?;
        let value = scalar(&tape, loss);
        if value.is_finite() {
            tape.backward(loss)?;
            self.params.collect_grads(&tape, Network::Discriminator, &vars)?;
            self.discriminator_opt.step(&mut self.params.discriminator)?;
        }
        Ok(value)
    }

    /// One autoencoder update against the current, frozen discriminator.
    pub fn generator_step(&mut self, pass: GeneratorPass) -> Result<StepLosses> {
        let GeneratorPass {
            mut tape,
            encoder,
            decoder,
            z,
            z_imi,
            x_rec,
            ..
        } = pass;
        let disc = self.params.bind(&mut tape, Network::Discriminator, false);
        let d_rec = self.params.discriminate_on(&mut tape, &disc, x_rec)?;
        let lambda = self.config.lambda as f32;
        let loss = generator_loss(&mut tape, z, z_imi, d_rec, lambda)?;
        let out = StepLosses {
            l_dx: 0.0,
            l_ae: scalar(&tape, loss.total),
            z_error: scalar(&tape, loss.z_error),
            gen_loss: scalar(&tape, loss.gen_loss),
        };
        if out.is_finite() {
            self.apply_generator_grads(&mut tape, loss.total, &encoder, &decoder)?;
        }
        Ok(out)
    }

    fn apply_generator_grads(
        &mut self,
        tape: &mut Tape<f32>,
        loss: Var,
        encoder: &[Var],
        decoder: &[Var],
    ) -> Result<()> {
        tape.backward(loss)?;
        self.params.collect_grads(tape, Network::Encoder, encoder)?;
        self.params.collect_grads(tape, Network::Decoder, decoder)?;
        let ModelParams {
            encoder, decoder, ..
        } = &mut self.params;
        self.generator_opt.step(encoder.iter_mut().chain(decoder.iter_mut()))
    }

    /// Full adversarial step on one batch.
    pub fn ran_step(&mut self, x_nor: &[f32], x_imi: &[f32]) -> Result<StepLosses> {
        let pass = self.generator_forward(x_nor, x_imi)?;
        let l_dx = self.discriminator_step(pass.reconstruction(), x_nor)?;
        let mut losses = self.generator_step(pass)?;
        losses.l_dx = l_dx;
        Ok(losses)
    }

    /// Reconstruction-only (and optionally latent-constrained) step used by
    /// the reduced variants.
    ///
    /// Without `x_imi` the decoder reconstructs from `Z`; with it, from
    /// `Z_imi`, and `lambda * mse(Z_imi, Z)` is added.
    pub fn autoencoder_step(&mut self, x_nor: &[f32], x_imi: Option<&[f32]>) -> Result<StepLosses> {
        let m = self.m();
        let batch = x_nor.len() / m;
        let mut tape = Tape::new();
        let encoder = self.params.bind(&mut tape, Network::Encoder, true);
        let decoder = self.params.bind(&mut tape, Network::Decoder, true);
        let xn = tape.constant(vec![batch, 1, m], x_nor.to_vec())?;
        let z = self.params.encode_on(&mut tape, &encoder, xn)?;
        let (loss, z_error) = match x_imi {
            None => {
                let rec = self.params.decode_on(&mut tape, &decoder, z)?;
                (tape.mse(rec, xn)?, None)
            }
            Some(x_imi) => {
                let xi = tape.constant(vec![batch, 1, m], x_imi.to_vec())?;
                let z_imi = self.params.encode_on(&mut tape, &encoder, xi)?;
                let rec = self.params.decode_on(&mut tape, &decoder, z_imi)?;
                let rec_loss = tape.mse(rec, xn)?;
                let z_err = tape.mse(z_imi, z)?;
                let weighted = tape.scale(z_err, self.config.lambda as f32);
                (tape.add(rec_loss, weighted)?, Some(z_err))
            }
        };
        let out = StepLosses {
            l_dx: 0.0,
            l_ae: scalar(&tape, loss),
            z_error: z_error.map_or(0.0, |v| scalar(&tape, v)),
            gen_loss: 0.0,
        };
        if out.is_finite() {
            self.apply_generator_grads(&mut tape, loss, &encoder, &decoder)?;
        }
        Ok(out)
    }
}

fn to_f32(rows: &Matrix, idx: &[usize]) -> Vec<f32> {
    idx.iter()
        .flat_map(|&i| rows.row(i).iter().map(|&v| v as f32))
        .collect()
}

/// Trains with the losses selected by `arch.variant`.
pub fn train(
    x_nor: &Matrix,
    stats: &ColumnStats,
    config: &TrainConfig,
    arch: &ArchConfig,
) -> Result<(ModelParams, LossRecord)> {
    train_with_progress(x_nor, stats, config, arch, |_, _| {})
}

/// [`train`] with `arch.variant` replaced by `variant`.
pub fn train_variant(
    variant: Variant,
    x_nor: &Matrix,
    stats: &ColumnStats,
    config: &TrainConfig,
    arch: &ArchConfig,
) -> Result<(ModelParams, LossRecord)> {
    train(x_nor, stats, config, &arch.with_variant(variant))
}

/// [`train`], calling `progress(epoch, losses)` after every epoch (1-based).
pub fn train_with_progress(
    x_nor: &Matrix,
    stats: &ColumnStats,
    config: &TrainConfig,
    arch: &ArchConfig,
    mut progress: impl FnMut(usize, &StepLosses),
) -> Result<(ModelParams, LossRecord)> {
    config.validate(x_nor.rows())?;
    if x_nor.cols() != arch.m {
        return Err(Error::InvalidShape(format!(
            "architecture built for m = {} but rows have length {}",
            arch.m,
            x_nor.cols()
        )));
    }
    let variant = arch.variant;
    let mut trainer = Trainer::new(arch, config)?;
    let mut record = LossRecord::default();
    let mut order: Vec<usize> = (0..x_nor.rows()).collect();

    for epoch in 1..=config.epochs {
        let e = epoch as u64;
        order.shuffle(&mut rng::stream(config.seed, Stream::Shuffle, e));
        let x_imi = match variant {
            Variant::Ran | Variant::LaeFcn => {
                let spec = CorruptionSpec::new(
                    config.corrupt_level,
                    rng::derive_seed(config.seed, Stream::EpochImitation, e),
                )?;
                Some(imitate(x_nor, stats, &spec)?)
            }
            Variant::Ae | Variant::AeFcn => None,
        };

        let mut sum = StepLosses::default();
        let mut batches = 0usize;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let xn = to_f32(x_nor, idx);
            let xi = x_imi.as_ref().map(|x| to_f32(x, idx));
            let step = match variant {
                Variant::Ran => trainer.ran_step(&xn, xi.as_deref().unwrap())?,
                Variant::LaeFcn => trainer.autoencoder_step(&xn, xi.as_deref())?,
                Variant::Ae | Variant::AeFcn => trainer.autoencoder_step(&xn, None)?,
            };
            if !step.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b + 1,
                    l_dx: step.l_dx,
                    l_ae: step.l_ae,
                });
            }
            sum.l_dx += step.l_dx;
            sum.l_ae += step.l_ae;
            sum.z_error += step.z_error;
            sum.gen_loss += step.gen_loss;
            batches += 1;
        }
        let n = batches as f64;
        let mean = StepLosses {
            l_dx: sum.l_dx / n,
            l_ae: sum.l_ae / n,
            z_error: sum.z_error / n,
            gen_loss: sum.gen_loss / n,
        };
        progress(epoch, &mean);
        record.push(mean);
    }
    let params = trainer.into_params();
    if !params.is_finite() {
        return Err(Error::NonFinite {
            epoch: config.epochs,
            batch: 0,
            l_dx: record.l_dx.last().copied().unwrap_or(f64::NAN),
            l_ae: record.l_ae.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok((params, record))
}
