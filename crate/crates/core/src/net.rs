//! The simplified AlexNet used for every dimensionality: four convolutions,
//! three max pools and three fully connected layers. Only the spatial rank
//! and input channel count vary.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encode::Dimension;
use crate::error::{Error, Result};
use crate::ingest::Label;
use crate::tensor::{
    conv_backward, conv_forward, dropout, linear, linear_backward, maxpool, maxpool_backward, read_gdt1,
    relu, relu_backward, softmax, softmax_cross_entropy, write_gdt1, ConvSpec, DropoutMode, Scalar,
    Tensor,
};

/// (filters, kernel, stride, padding) per convolution.
const CONVS: [(usize, usize, usize, usize); 4] = [(48, 5, 2, 2), (128, 5, 2, 2), (192, 3, 1, 1), (192, 3, 1, 1)];
/// Whether a max pool follows each convolution.
const POOL_AFTER: [bool; 4] = [true, true, false, true];
const HIDDEN: [usize; 2] = [192, 128];
pub const CLASSES: usize = 2;
pub const DROPOUT_RATE: f64 = 0.5;

pub const PARAM_NAMES: [&str; 14] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "conv4.weight",
    "conv4.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
    "fc3.weight",
    "fc3.bias",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    pub rank: usize,
    pub in_channels: usize,
    /// Input extent along every spatial axis.
    pub extent: usize,
}

impl NetworkConfig {
    pub fn new(dim: Dimension, in_channels: usize) -> Self {
        NetworkConfig {
            rank: dim.rank(),
            in_channels,
            extent: 128,
        }
    }

    pub fn with_extent(mut self, extent: usize) -> Self {
        self.extent = extent;
        self
    }

    pub fn input_shape(&self) -> Vec<usize> {
        let mut s = vec![self.in_channels];
        s.extend(std::iter::repeat_n(self.extent, self.rank));
        s
    }

    fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.rank) {
            return Err(Error::UnsupportedRank(self.rank));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("network needs at least one input channel".into()));
        }
        Ok(())
    }

    fn conv_specs(&self) -> Result<[ConvSpec; 4]> {
        let mut cin = self.in_channels;
        let mut out = Vec::with_capacity(4);
        for &(f, k, s, p) in &CONVS {
            out.push(ConvSpec::new(self.rank, cin, f, k, s, p)?);
            cin = f;
        }
        Ok(out.try_into().expect("four convolutions"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub name: &'static str,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
}

/// Shape propagation through the layer schedule, one row per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTrace {
    pub rows: Vec<LayerRow>,
}

impl LayerTrace {
    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn inputs(&self) -> Vec<Vec<usize>> {
        self.rows.iter().map(|r| r.input.clone()).collect()
    }

    /// Flattened feature width entering the first fully connected layer.
    pub fn flatten_width(&self) -> usize {
        self.rows
            .iter()
            .find(|r| r.name == "Flatten")
            .map_or(0, |r| r.output[0])
    }

    /// First row whose input shape differs from `expected`, or `None` when
    /// they agree row for row.
    pub fn first_mismatch(&self, expected: &[Vec<usize>]) -> Option<usize> {
        let n = self.rows.len().max(expected.len());
        (0..n).find(|&i| self.rows.get(i).map(|r| &r.input) != expected.get(i))
    }
}

/// Input shapes of the reference schedule at extent 128 with the canonical
/// channel counts (6 channels in 1D, 3 otherwise).
pub fn reference_inputs(rank: usize) -> Vec<Vec<usize>> {
    let sp = |c: usize, m: usize| {
        let mut s = vec![c];
        s.extend(std::iter::repeat_n(m, rank));
        s
    };
    let c0 = if rank == 1 { 6 } else { 3 };
    let flat = 192 * 4usize.pow(rank as u32);
    vec![
        sp(c0, 128),
        sp(48, 64),
        sp(48, 32),
        sp(128, 16),
        sp(128, 8),
        sp(192, 8),
        sp(192, 8),
        sp(192, 4),
        vec![flat],
        vec![192],
        vec![192],
        vec![128],
        vec![128],
    ]
}

fn pooled_shape(input: &[usize]) -> Result<Vec<usize>> {
    let mut out = vec![input[0]];
    for (axis, &m) in input[1..].iter().enumerate() {
        if m < 2 {
            return Err(Error::ShapeUnderflow(format!("pooling an extent of {m}")));
        }
        if m % 2 != 0 {
            return Err(Error::IndivisibleExtent { axis, extent: m });
        }
        out.push(m / 2);
    }
    Ok(out)
}

/// Propagates shapes through the schedule without allocating parameters.
pub fn shape_trace(cfg: &NetworkConfig) -> Result<LayerTrace> {
    cfg.validate()?;
    let specs = cfg.conv_specs()?;
    let mut rows = Vec::with_capacity(13);
    let mut shape = cfg.input_shape();
    for (i, spec) in specs.iter().enumerate() {
        let out = spec.output_shape(&shape)?;
        rows.push(LayerRow {
            name: "Conv+ReLU",
            input: shape,
            output: out.clone(),
            params: spec.param_count(),
        });
        shape = out;
        if POOL_AFTER[i] {
            let out = pooled_shape(&shape)?;
            rows.push(LayerRow {
                name: "MaxPooling",
                input: shape,
                output: out.clone(),
                params: 0,
            });
            shape = out;
        }
    }
    let flat: usize = shape.iter().product();
    rows.push(LayerRow {
        name: "Flatten",
        input: shape,
        output: vec![flat],
        params: 0,
    });
    let mut width = flat;
    for (j, &h) in HIDDEN.iter().enumerate() {
        rows.push(LayerRow {
            name: "FC+ReLU",
            input: vec![width],
            output: vec![h],
            params: width * h + h,
        });
        rows.push(LayerRow {
            name: "Dropout",
            input: vec![h],
            output: vec![h],
            params: 0,
        });
        width = HIDDEN[j];
    }
    rows.push(LayerRow {
        name: "FC+Softmax",
        input: vec![width],
        output: vec![CLASSES],
        params: width * CLASSES + CLASSES,
    });
    Ok(LayerTrace { rows })
}

/// Scalar parameter count for a configuration.
pub fn param_count(cfg: &NetworkConfig) -> Result<usize> {
    Ok(shape_trace(cfg)?.total_params())
}

/// Forward-pass behaviour: evaluation, or training with dropout drawn from
/// a ChaCha stream seeded by `dropout_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

/// Class decision and probabilities `[p_hc, p_pd]`. Ties go to HC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub probs: [f64; 2],
}

impl Prediction {
    pub fn from_logits<T: Scalar>(logits: &[T]) -> Self {
        let p = softmax(logits);
        let probs = [p[0].to_f64(), p[1].to_f64()];
        let label = if probs[1] > probs[0] { Label::Pd } else { Label::Hc };
        Prediction { label, probs }
    }
}

/// Loss and accuracy over a mini-batch, with per-sample logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub logits: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f32> {
    config: NetworkConfig,
    specs: [ConvSpec; 4],
    /// Parameters in [`PARAM_NAMES`] order.
    params: Vec<Tensor<T>>,
}

/// Activations kept for the backward pass.
struct Tape<T: Scalar> {
    conv_in: Vec<Tensor<T>>,
    conv_out: Vec<Tensor<T>>,
    pools: Vec<(Vec<u32>, Vec<usize>)>,
    fc_in: Vec<Tensor<T>>,
    fc_out: Vec<Tensor<T>>,
    masks: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-uniform weights (bound `sqrt(6 / fan_in)`)
    /// and zero biases. Draws are made in 64-bit, so both precisions built
    /// from one seed hold the same values up to rounding.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        let trace = shape_trace(&config)?;
        let specs = config.conv_specs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(PARAM_NAMES.len());
        let he = |shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
            Tensor::from_vec(shape, data).expect("shape product")
        };
        for spec in &specs {
            let fan_in = spec.in_channels * spec.kernel.pow(spec.rank as u32);
            params.push(he(&spec.weight_shape(), fan_in, &mut rng));
            params.push(Tensor::zeros(&[spec.out_channels]));
        }
        let mut width = trace.flatten_width();
        for &out in HIDDEN.iter().chain(std::iter::once(&CLASSES)) {
            params.push(he(&[out, width], width, &mut rng));
            params.push(Tensor::zeros(&[out]));
            width = out;
        }
        Ok(Network { config, specs, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config,
            specs: self.specs,
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let want = self.config.input_shape();
        if input.shape() != want.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "network expects input {want:?}, got {:?}",
                input.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, input: &Tensor<T>, mode: Mode, keep: bool) -> Result<(Vec<T>, Option<Tape<T>>)> {
        self.check_input(input)?;
        let mut tape = Tape {
            conv_in: Vec::new(),
            conv_out: Vec::new(),
            pools: Vec::new(),
            fc_in: Vec::new(),
            fc_out: Vec::new(),
            masks: Vec::new(),
        };
        let (dmode, mut rng) = match mode {
            Mode::Eval => (DropoutMode::Eval, ChaCha8Rng::seed_from_u64(0)),
            Mode::Train { dropout_seed } => (DropoutMode::Train, ChaCha8Rng::seed_from_u64(dropout_seed)),
        };
        let mut x = input.clone();
        for (i, spec) in self.specs.iter().enumerate() {
            let y = relu(&conv_forward(&x, &self.params[2 * i], &self.params[2 * i + 1], spec)?);
            if keep {
                tape.conv_in.push(x);
            }
            x = if POOL_AFTER[i] {
                let pooled = maxpool(&y, self.config.rank)?;
                if keep {
                    tape.pools.push((pooled.argmax, y.shape().to_vec()));
                }
                pooled.output
            } else {
                y.clone()
            };
            if keep {
                tape.conv_out.push(y);
            }
        }
        for j in 0..3 {
            let z = linear(&x, &self.params[8 + 2 * j], &self.params[9 + 2 * j])?;
            if keep {
                tape.fc_in.push(x);
            }
            if j == 2 {
                x = z;
                break;
            }
            let h = relu(&z);
            let (d, mask) = dropout(&h, DROPOUT_RATE, dmode, &mut rng);
            if keep {
                tape.fc_out.push(h);
                tape.masks.push(mask);
            }
            x = d;
        }
        Ok((x.into_data(), keep.then_some(tape)))
    }

    /// Logits for one input of shape `(C, extent^N)`.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<Vec<T>> {
        Ok(self.run(input, mode, false)?.0)
    }

    /// Eval-mode logits for a batch, shape `(B, 2)`.
    pub fn forward_batch(&self, batch: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let rows: Vec<Vec<T>> = batch
            .par_iter()
            .map(|x| self.forward(x, Mode::Eval))
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        Tensor::from_vec(&[rows.len(), CLASSES], rows.concat())
    }

    pub fn predict(&self, batch: &[&Tensor<T>]) -> Result<Vec<Prediction>> {
        batch
            .par_iter()
            .map(|x| Ok(Prediction::from_logits(&self.forward(x, Mode::Eval)?)))
            .collect()
    }

    /// Cross-entropy loss, logits and per-parameter gradients for one
    /// sample.
    pub fn loss_and_grads(&self, input: &Tensor<T>, label: Label, mode: Mode) -> Result<(T, Vec<T>, Vec<Vec<T>>)> {
        let (logits, tape) = self.run(input, mode, true)?;
        let mut tape = tape.expect("tape requested");
        let (loss, dlogits) = softmax_cross_entropy(&logits, label.index())?;
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); PARAM_NAMES.len()];

        let mut g = Tensor::from_vec(&[CLASSES], dlogits)?;
        for j in (0..3).rev() {
            if j < 2 {
                if let Some(mask) = &tape.masks[j] {
                    g.data_mut().iter_mut().zip(mask).for_each(|(v, &m)| *v *= m);
                }
                g = relu_backward(&g, &tape.fc_out[j])?;
            }
            let lg = linear_backward(&g, &tape.fc_in[j], &self.params[8 + 2 * j])?;
            grads[8 + 2 * j] = lg.weights.into_data();
            grads[9 + 2 * j] = lg.bias.into_data();
            g = lg.input;
        }
        let mut pool = tape.pools.len();
        for i in (0..4).rev() {
            if POOL_AFTER[i] {
                pool -= 1;
                let (argmax, shape) = &tape.pools[pool];
                g = maxpool_backward(&g, argmax, shape)?;
            }
            g = relu_backward(&g, &tape.conv_out[i])?;
            let input = tape.conv_in.pop().expect("conv input");
            let cg = conv_backward(&g, &input, &self.params[2 * i], &self.specs[i], i > 0)?;
            grads[2 * i] = cg.weights.into_data();
            grads[2 * i + 1] = cg.bias.into_data();
            if let Some(gi) = cg.input {
                g = gi;
            }
        }
        Ok((loss, logits, grads))
    }

    /// Mean-loss gradients of a mini-batch, written to the parameters'
    /// gradient slots. `dropout_seeds[i]` drives sample `i` in training;
    /// `None` evaluates without dropout.
    ///
    /// Samples are processed in parallel and summed in batch order, so the
    /// result does not depend on the thread count.
    pub fn batch_gradients(&mut self, batch: &[(&Tensor<T>, Label)], dropout_seeds: Option<&[u64]>) -> Result<BatchStats> {
        if batch.is_empty() {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        if dropout_seeds.is_some_and(|s| s.len() != batch.len()) {
            return Err(Error::ShapeMismatch("one dropout seed per sample".into()));
        }
        let per_sample: Vec<(T, Vec<T>, Vec<Vec<T>>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, (x, label))| {
                let mode = dropout_seeds.map_or(Mode::Eval, |s| Mode::Train { dropout_seed: s[i] });
                self.loss_and_grads(x, *label, mode)
            })
            .collect::<Result<_>>()?;
        let scale = T::from_f64(1.0 / batch.len() as f64);
        let mut stats = BatchStats {
            loss_sum: 0.0,
            correct: 0,
            logits: Vec::with_capacity(batch.len()),
        };
        for p in self.params.iter_mut() {
            p.grad_mut().fill(T::ZERO);
        }
        for ((loss, logits, grads), (_, label)) in per_sample.into_iter().zip(batch) {
            stats.loss_sum += loss.to_f64();
            if Prediction::from_logits(&logits).label == *label {
                stats.correct += 1;
            }
            stats.logits.push([logits[0].to_f64(), logits[1].to_f64()]);
            for (p, g) in self.params.iter_mut().zip(grads) {
                p.grad_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b * scale);
            }
        }
        Ok(stats)
    }
}

const MANIFEST: &str = "network.txt";

impl Network<f32> {
    /// Writes `network.txt` (configuration and parameter list) and one
    /// GDT1 file per parameter into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = format!(
            "rank={}\nin_channels={}\nextent={}\n",
            self.config.rank, self.config.in_channels, self.config.extent
        );
        for (name, p) in PARAM_NAMES.iter().zip(&self.params) {
            let file = format!("{name}.gdt");
            let path = dir.join(&file);
            let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_gdt1(p, BufWriter::new(f))?;
            manifest.push_str(&format!("param={name} {file}\n"));
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (mut rank, mut cin, mut extent) = (None, None, None);
        let mut files = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad checkpoint line {line:?}")))?;
            let num = || v.trim().parse::<usize>().map_err(|_| Error::Format(format!("bad value in {line:?}")));
            match k.trim() {
                "rank" => rank = Some(num()?),
                "in_channels" => cin = Some(num()?),
                "extent" => extent = Some(num()?),
                "param" => {
                    let (name, file) = v
                        .split_once(' ')
                        .ok_or_else(|| Error::Format(format!("bad param line {line:?}")))?;
                    files.push((name.to_string(), file.trim().to_string()));
                }
                other => return Err(Error::Format(format!("unknown checkpoint key {other:?}"))),
            }
        }
        let missing = || Error::Format("checkpoint header incomplete".into());
        let config = NetworkConfig {
            rank: rank.ok_or_else(missing)?,
            in_channels: cin.ok_or_else(missing)?,
            extent: extent.ok_or_else(missing)?,
        };
        let mut net = Network::<f32>::build(config, 0)?;
        if files.len() != PARAM_NAMES.len() {
            return Err(Error::Format(format!("checkpoint lists {} parameters", files.len())));
        }
        for (i, (name, file)) in files.iter().enumerate() {
            if name != PARAM_NAMES[i] {
                return Err(Error::Format(format!("expected {}, found {name}", PARAM_NAMES[i])));
            }
            let path = dir.join(file);
            let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let t = read_gdt1(BufReader::new(f))?;
            if t.shape() != net.params[i].shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: stored {:?}, expected {:?}",
                    t.shape(),
                    net.params[i].shape()
                )));
            }
            net.params[i] = t;
        }
        Ok(net)
    }
}
