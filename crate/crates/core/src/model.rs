//! Encoder, decoder and discriminator networks, plus the ablation variants.
//!
//! Convolutional variants pad the input on the right to the shortest length
//! the stride stack can invert exactly, run the transposed stack back up to
//! that length, and crop the reconstruction to `m`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{conv1d_out_len, conv1d_transpose_out_len, Activation, Tape, Tensor, Var};

/// Which network family and which losses a model is trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Dense autoencoder, reconstruction loss only.
    #[serde(rename = "AE")]
    Ae,
    /// Convolutional autoencoder, reconstruction loss only.
    #[serde(rename = "AE_FCN")]
    AeFcn,
    /// Convolutional autoencoder with the latent constraint.
    #[serde(rename = "LAE_FCN")]
    LaeFcn,
    /// Latent constraint plus adversarial training against the discriminator.
    #[serde(rename = "RAN")]
    Ran,
}

impl Variant {
    /// Column order of the ablation table.
    pub const ALL: [Variant; 4] = [Variant::Ran, Variant::LaeFcn, Variant::AeFcn, Variant::Ae];

    pub fn is_convolutional(self) -> bool {
        !matches!(self, Variant::Ae)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ae => "AE",
            Variant::AeFcn => "AE-FCN",
            Variant::LaeFcn => "LAE-FCN",
            Variant::Ran => "RAN",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "AE" => Ok(Variant::Ae),
            "AE-FCN" => Ok(Variant::AeFcn),
            "LAE-FCN" => Ok(Variant::LaeFcn),
            "RAN" => Ok(Variant::Ran),
            _ => Err(Error::InvalidArgument(format!(
                "unknown variant {s:?} (expected RAN, LAE-FCN, AE-FCN or AE)"
            ))),
        }
    }
}

/// One strided convolution. Padding is `(kernel_size - 1) / 2` on each side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub const fn new(out_channels: usize, kernel_size: usize, stride: usize) -> Self {
        ConvLayer {
            out_channels,
            kernel_size,
            stride,
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel_size.saturating_sub(1) / 2
    }

    fn check(&self, layer: &str) -> Result<()> {
        if self.out_channels == 0 || self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::Construction {
                layer: layer.to_string(),
                message: format!("channels, kernel size and stride must be positive: {self:?}"),
            });
        }
        Ok(())
    }
}

/// Decoder stack mirroring `encoder`: same kernels and strides in reverse,
/// channel counts walking back down to one.
pub fn mirror(encoder: &[ConvLayer]) -> Vec<ConvLayer> {
    (0..encoder.len())
        .rev()
        .map(|i| {
            let out = if i == 0 { 1 } else { encoder[i - 1].out_channels };
            ConvLayer::new(out, encoder[i].kernel_size, encoder[i].stride)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Subsequence length.
    pub m: usize,
    pub latent_dim: usize,
    pub encoder_layers: Vec<ConvLayer>,
    pub decoder_layers: Vec<ConvLayer>,
    pub discriminator_layers: Vec<ConvLayer>,
    /// Hidden widths of the dense autoencoder used by [`Variant::Ae`].
    pub dense_layers: Vec<usize>,
    pub activation: Activation,
    /// The decoder emits `output_scale * tanh(..)`.
    pub output_scale: f64,
    pub variant: Variant,
}

impl ArchConfig {
    /// Default architecture for length `m`.
    pub fn new(m: usize, variant: Variant) -> Self {
        let encoder_layers = vec![
            ConvLayer::new(16, 7, 2),
            ConvLayer::new(32, 5, 2),
            ConvLayer::new(64, 3, 2),
        ];
        ArchConfig {
            m,
            latent_dim: 32,
            decoder_layers: mirror(&encoder_layers),
            encoder_layers,
            discriminator_layers: vec![ConvLayer::new(16, 5, 2), ConvLayer::new(32, 5, 2)],
            dense_layers: vec![128, 64, 64],
            activation: Activation::leaky_relu(0.2),
            output_scale: 4.0,
            variant,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ArchConfig {
            variant,
            ..self.clone()
        }
    }

    /// Checks every invariant and derives the layer lengths.
    pub fn geometry(&self) -> Result<Geometry> {
        let arch_err = |layer: &str, message: String| Error::Construction {
            layer: layer.to_string(),
            message,
        };
        if self.m < 2 {
            return Err(arch_err("input", format!("length must be at least 2, got {}", self.m)));
        }
        if self.latent_dim == 0 {
            return Err(arch_err("latent", "latent_dim must be positive".into()));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(arch_err(
                "decoder output",
                format!("output scale must be positive, got {}", self.output_scale),
            ));
        }
        self.activation.validate()?;

        let mut disc_lens = Vec::with_capacity(self.discriminator_layers.len());
        let mut len = self.m;
        for (i, l) in self.discriminator_layers.iter().enumerate() {
            let name = format!("discriminator layer {i}");
            l.check(&name)?;
            len = conv1d_out_len(len, l.kernel_size, l.stride, l.padding())
                .map_err(|e| arch_err(&name, e.to_string()))?;
            disc_lens.push(len);
        }
        let disc_channels = self.discriminator_layers.last().map_or(1, |l| l.out_channels);
        let disc_flat = disc_channels * len;

        if !self.variant.is_convolutional() {
            if self.dense_layers.is_empty() {
                return Err(arch_err("dense stack", "needs at least one hidden layer".into()));
            }
            if let Some(i) = self.dense_layers.iter().position(|&w| w == 0) {
                return Err(arch_err(&format!("dense layer {i}"), "width must be positive".into()));
            }
            return Ok(Geometry {
                padded_len: self.m,
                encoder_lens: Vec::new(),
                flat_dim: self.dense_layers.last().copied().unwrap_or(self.m),
                disc_lens,
                disc_flat,
            });
        }

        if self.encoder_layers.is_empty() {
            return Err(arch_err("encoder", "needs at least one layer".into()));
        }
        for (i, l) in self.encoder_layers.iter().enumerate() {
            l.check(&format!("encoder layer {i}"))?;
        }
        let expected = mirror(&self.encoder_layers);
        if self.decoder_layers.len() != expected.len() {
            return Err(arch_err(
                "decoder",
                format!(
                    "has {} layers but the encoder has {}",
                    self.decoder_layers.len(),
                    expected.len()
                ),
            ));
        }
        for (j, (got, want)) in self.decoder_layers.iter().zip(&expected).enumerate() {
            if got != want {
                return Err(arch_err(
                    &format!("decoder layer {j}"),
                    format!("{got:?} does not mirror the encoder (expected {want:?})"),
                ));
            }
        }

        // Each admissible input length is determined by the final encoder
        // length, increasingly, so walk final lengths upward until the
        // implied input covers m.
        let mut final_len = 1usize;
        let padded_len = loop {
            let mut l = final_len;
            for layer in self.encoder_layers.iter().rev() {
                l = (l - 1) * layer.stride + layer.kernel_size - 2 * layer.padding();
            }
            if l >= self.m {
                break l;
            }
            final_len += 1;
        };

        let mut encoder_lens = Vec::with_capacity(self.encoder_layers.len());
        let mut len = padded_len;
        for (i, l) in self.encoder_layers.iter().enumerate() {
            len = conv1d_out_len(len, l.kernel_size, l.stride, l.padding())
                .map_err(|e| arch_err(&format!("encoder layer {i}"), e.to_string()))?;
            encoder_lens.push(len);
        }
        let mut dec = len;
        for (j, l) in self.decoder_layers.iter().enumerate() {
            dec = conv1d_transpose_out_len(dec, l.kernel_size, l.stride, l.padding())
                .map_err(|e| arch_err(&format!("decoder layer {j}"), e.to_string()))?;
        }
        if dec != padded_len {
            return Err(arch_err(
                "decoder",
                format!("restores length {dec}, expected {padded_len}"),
            ));
        }
        let channels = self.encoder_layers.last().unwrap().out_channels;
        Ok(Geometry {
            padded_len,
            flat_dim: channels * len,
            encoder_lens,
            disc_lens,
            disc_flat,
        })
    }

    /// Shapes of every parameter tensor, grouped by network, in binding order.
    pub fn param_shapes(&self) -> Result<ParamShapes> {
        let g = self.geometry()?;
        let latent = self.latent_dim;
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        if self.variant.is_convolutional() {
            let mut c_in = 1;
            for l in &self.encoder_layers {
                encoder.push(vec![l.out_channels, c_in, l.kernel_size]);
                encoder.push(vec![l.out_channels]);
                c_in = l.out_channels;
            }
            encoder.push(vec![latent, g.flat_dim]);
            encoder.push(vec![latent]);

            decoder.push(vec![g.flat_dim, latent]);
            decoder.push(vec![g.flat_dim]);
            for l in &self.decoder_layers {
                decoder.push(vec![c_in, l.out_channels, l.kernel_size]);
                decoder.push(vec![l.out_channels]);
                c_in = l.out_channels;
            }
        } else {
            let mut f_in = self.m;
            for &w in &self.dense_layers {
                encoder.push(vec![w, f_in]);
                encoder.push(vec![w]);
                f_in = w;
            }
            encoder.push(vec![latent, f_in]);
            encoder.push(vec![latent]);

            decoder.push(vec![f_in, latent]);
            decoder.push(vec![f_in]);
            let widths = self.dense_layers.iter().rev().skip(1).copied().chain([self.m]);
            for w in widths {
                decoder.push(vec![w, f_in]);
                decoder.push(vec![w]);
                f_in = w;
            }
        }
        let mut discriminator = Vec::new();
        let mut c_in = 1;
        for l in &self.discriminator_layers {
            discriminator.push(vec![l.out_channels, c_in, l.kernel_size]);
            discriminator.push(vec![l.out_channels]);
            c_in = l.out_channels;
        }
        discriminator.push(vec![1, g.disc_flat]);
        discriminator.push(vec![1]);
        Ok(ParamShapes {
            encoder,
            decoder,
            discriminator,
        })
    }
}

/// Lengths derived from an [`ArchConfig`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    /// Encoder input length after right padding; the decoder restores it exactly.
    pub padded_len: usize,
    /// Signal length after each encoder layer.
    pub encoder_lens: Vec<usize>,
    /// Width of the flattened features feeding the latent projection.
    pub flat_dim: usize,
    pub disc_lens: Vec<usize>,
    pub disc_flat: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShapes {
    pub encoder: Vec<Vec<usize>>,
    pub decoder: Vec<Vec<usize>>,
    pub discriminator: Vec<Vec<usize>>,
}

impl ParamShapes {
    pub fn count(&self) -> usize {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .chain(&self.discriminator)
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Network {
    Encoder,
    Decoder,
    Discriminator,
}

impl Network {
    pub fn name(self) -> &'static str {
        match self {
            Network::Encoder => "encoder",
            Network::Decoder => "decoder",
            Network::Discriminator => "discriminator",
        }
    }
}

/// Trainable weights of all three networks and the config that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ArchConfig,
    pub seed: u64,
    pub encoder: Vec<Tensor<f32>>,
    pub decoder: Vec<Tensor<f32>>,
    pub discriminator: Vec<Tensor<f32>>,
}

fn fan_in(shape: &[usize], transposed: bool) -> usize {
    match *shape {
        [_, i, k] if !transposed => i * k,
        [_, o, k] => o * k,
        [_, i] => i,
        _ => 1,
    }
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_params(config: &ArchConfig, seed: u64) -> Result<ModelParams> {
    let shapes = config.param_shapes()?;
    let mut counter = 0u64;
    let mut build = |group: &[Vec<usize>], transposed_convs: bool| -> Vec<Tensor<f32>> {
        group
            .iter()
            .map(|shape| {
                let idx = counter;
                counter += 1;
                let numel: usize = shape.iter().product();
                let data = if shape.len() == 1 {
                    vec![0.0f32; numel]
                } else {
                    let bound = 1.0 / (fan_in(shape, transposed_convs) as f32).sqrt();
                    let mut rng = rng::stream(seed, Stream::Init, idx);
                    (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
                };
                Tensor::new(shape.clone(), data).expect("shape matches data")
            })
            .collect()
    };
    let encoder = build(&shapes.encoder, false);
    let decoder = build(&shapes.decoder, config.variant.is_convolutional());
    let discriminator = build(&shapes.discriminator, false);
    Ok(ModelParams {
        config: config.clone(),
        seed,
        encoder,
        decoder,
        discriminator,
    })
}

impl ModelParams {
    pub fn network(&self, net: Network) -> &[Tensor<f32>] {
        match net {
            Network::Encoder => &self.encoder,
            Network::Decoder => &self.decoder,
            Network::Discriminator => &self.discriminator,
        }
    }

    pub fn network_mut(&mut self, net: Network) -> &mut Vec<Tensor<f32>> {
        match net {
            Network::Encoder => &mut self.encoder,
            Network::Decoder => &mut self.decoder,
            Network::Discriminator => &mut self.discriminator,
        }
    }

    /// `(name, tensor)` for every parameter, e.g. `encoder.3`.
    pub fn named(&self) -> Vec<(String, &Tensor<f32>)> {
        [Network::Encoder, Network::Decoder, Network::Discriminator]
            .into_iter()
            .flat_map(|net| {
                self.network(net)
                    .iter()
                    .enumerate()
                    .map(move |(i, t)| (format!("{}.{i}", net.name()), t))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// Records one network's parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape<f32>, net: Network, trainable: bool) -> Vec<Var> {
        self.network(net)
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t)
                } else {
                    tape.leaf(Tensor::new(t.shape().to_vec(), t.data().to_vec()).unwrap())
                }
            })
            .collect()
    }

    /// Copies the gradients of bound leaves back onto the parameters.
    pub fn collect_grads(&mut self, tape: &Tape<f32>, net: Network, vars: &[Var]) -> Result<()> {
        for (t, v) in self.network_mut(net).iter_mut().zip(vars) {
            let g = tape
                .grad(*v)
                .ok_or_else(|| Error::InvalidUse(format!("{} parameter has no gradient", net.name())))?;
            t.accumulate_grad(g)?;
        }
        Ok(())
    }

    fn check_batch(&self, tape: &Tape<f32>, x: Var, what: &str) -> Result<usize> {
        match *tape.value(x).shape() {
            [b, 1, l] if l == self.config.m => Ok(b),
            ref s => Err(Error::InvalidShape(format!(
                "{what} expects [B, 1, {}], got {s:?}",
                self.config.m
            ))),
        }
    }

    /// `[B, 1, m]` subsequences to `[B, latent_dim]` latent vectors.
    pub fn encode_on(&self, tape: &mut Tape<f32>, vars: &[Var], x: Var) -> Result<Var> {
        let cfg = &self.config;
        let g = cfg.geometry()?;
        let batch = self.check_batch(tape, x, "encoder")?;
        let act = cfg.activation;
        if !cfg.variant.is_convolutional() {
            let mut h = tape.reshape(x, vec![batch, cfg.m])?;
            let hidden = cfg.dense_layers.len();
            for i in 0..hidden {
                h = tape.dense(h, vars[2 * i], vars[2 * i + 1])?;
                h = tape.activation(h, act)?;
            }
            return tape.dense(h, vars[2 * hidden], vars[2 * hidden + 1]);
        }
        let mut h = tape.pad_right(x, g.padded_len - cfg.m)?;
        for (i, l) in cfg.encoder_layers.iter().enumerate() {
            h = tape.conv1d(h, vars[2 * i], vars[2 * i + 1], l.stride, l.padding())?;
            h = tape.activation(h, act)?;
        }
        let n = cfg.encoder_layers.len();
        let flat = tape.reshape(h, vec![batch, g.flat_dim])?;
        tape.dense(flat, vars[2 * n], vars[2 * n + 1])
    }

    /// `[B, latent_dim]` latent vectors to `[B, 1, m]` reconstructions.
    pub fn decode_on(&self, tape: &mut Tape<f32>, vars: &[Var], z: Var) -> Result<Var> {
        let cfg = &self.config;
        let g = cfg.geometry()?;
        let batch = match *tape.value(z).shape() {
            [b, d] if d == cfg.latent_dim => b,
            ref s => {
                return Err(Error::InvalidShape(format!(
                    "decoder expects [B, {}], got {s:?}",
                    cfg.latent_dim
                )))
            }
        };
        let act = cfg.activation;
        let scale = cfg.output_scale as f32;
        let mut h = tape.dense(z, vars[0], vars[1])?;
        h = tape.activation(h, act)?;
        let out = if !cfg.variant.is_convolutional() {
            let layers = cfg.dense_layers.len();
            for i in 0..layers {
                h = tape.dense(h, vars[2 + 2 * i], vars[3 + 2 * i])?;
                h = tape.activation(h, if i + 1 == layers { Activation::Tanh } else { act })?;
            }
            tape.reshape(h, vec![batch, 1, cfg.m])?
        } else {
            let channels = cfg.encoder_layers.last().unwrap().out_channels;
            let last_len = *g.encoder_lens.last().unwrap();
            h = tape.reshape(h, vec![batch, channels, last_len])?;
            let layers = cfg.decoder_layers.len();
            for (j, l) in cfg.decoder_layers.iter().enumerate() {
                h = tape.conv1d_transpose(h, vars[2 + 2 * j], vars[3 + 2 * j], l.stride, l.padding())?;
                h = tape.activation(h, if j + 1 == layers { Activation::Tanh } else { act })?;
            }
            tape.crop_right(h, cfg.m)?
        };
        Ok(tape.scale(out, scale))
    }

    /// `[B, 1, m]` subsequences to `[B, 1]` probabilities of being real normal data.
    pub fn discriminate_on(&self, tape: &mut Tape<f32>, vars: &[Var], x: Var) -> Result<Var> {
        let cfg = &self.config;
        let g = cfg.geometry()?;
        let batch = self.check_batch(tape, x, "discriminator")?;
        let mut h = x;
        for (i, l) in cfg.discriminator_layers.iter().enumerate() {
            h = tape.conv1d(h, vars[2 * i], vars[2 * i + 1], l.stride, l.padding())?;
            h = tape.activation(h, cfg.activation)?;
        }
        let n = cfg.discriminator_layers.len();
        let flat = tape.reshape(h, vec![batch, g.disc_flat])?;
        let logit = tape.dense(flat, vars[2 * n], vars[2 * n + 1])?;
        tape.activation(logit, Activation::Sigmoid)
    }

    fn single_input(&self, x: &Tensor<f32>) -> Result<Vec<f32>> {
        match *x.shape() {
            [1, l] | [l] if l == self.config.m => Ok(x.data().to_vec()),
            ref s => Err(Error::InvalidShape(format!(
                "expected a [1, {}] subsequence, got {s:?}",
                self.config.m
            ))),
        }
    }

    /// Latent vector of one `[1, m]` subsequence.
    pub fn encode(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let data = self.single_input(x)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, Network::Encoder, false);
        let x = tape.constant(vec![1, 1, self.config.m], data)?;
        let z = self.encode_on(&mut tape, &vars, x)?;
        Tensor::vector(tape.value(z).data().to_vec())
    }

    /// Reconstruction `[1, m]` of one latent vector.
    pub fn decode(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        if z.numel() != self.config.latent_dim || z.shape().len() > 2 {
            return Err(Error::InvalidShape(format!(
                "expected a latent vector of length {}, got {:?}",
                self.config.latent_dim,
                z.shape()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, Network::Decoder, false);
        let z = tape.constant(vec![1, self.config.latent_dim], z.data().to_vec())?;
        let x = self.decode_on(&mut tape, &vars, z)?;
        Tensor::new(vec![1, self.config.m], tape.value(x).data().to_vec())
    }

    pub fn discriminate(&self, x: &Tensor<f32>) -> Result<f32> {
        let data = self.single_input(x)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, Network::Discriminator, false);
        let x = tape.constant(vec![1, 1, self.config.m], data)?;
        let p = self.discriminate_on(&mut tape, &vars, x)?;
        tape.value(p).item()
    }

    /// `decode(encode(x))` for each row of a `[B * m]` buffer.
    pub fn reconstruct_batch(&self, rows: &[f32]) -> Result<Vec<f32>> {
        let m = self.config.m;
        if rows.is_empty() || rows.len() % m != 0 {
            return Err(Error::InvalidShape(format!(
                "batch of {} values is not a whole number of length-{m} rows",
                rows.len()
            )));
        }
        let mut tape = Tape::new();
        let enc = self.bind(&mut tape, Network::Encoder, false);
        let dec = self.bind(&mut tape, Network::Decoder, false);
        let x = tape.constant(vec![rows.len() / m, 1, m], rows.to_vec())?;
        let z = self.encode_on(&mut tape, &enc, x)?;
        let rec = self.decode_on(&mut tape, &dec, z)?;
        Ok(tape.value(rec).data().to_vec())
    }
}
