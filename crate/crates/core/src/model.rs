//! The three-armed heatmap network: a shared encoder, a goal/waypoint
//! decoder and a trajectory decoder conditioned on goal and waypoints.
//!
//! Every block keeps the activations its backward pass needs in a trace
//! struct; there is no general graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::ConditioningPyramid;
use crate::ops::{
    bilinear_upsample2, bilinear_upsample2_backward, concat_channels, concat_channels_backward,
    conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward, sigmoid,
    sigmoid_backward,
};
use crate::tensor::{Parameter, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Observed frames.
    pub n_p: usize,
    /// Predicted frames.
    pub n_f: usize,
    /// Semantic classes.
    pub n_classes: usize,
    /// 1-based frame indices of the waypoints, each in `(n_p, n_p + n_f)`.
    pub waypoint_frames: Vec<usize>,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub center_channels: usize,
    /// Divides goal/waypoint logits at inference.
    pub temperature: f64,
    /// Weight initialisation seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_p: 5,
            n_f: 30,
            n_classes: 5,
            waypoint_frames: vec![20],
            encoder_channels: vec![32, 32, 64, 64, 64],
            decoder_channels: vec![64, 64, 64, 32, 32],
            center_channels: 128,
            temperature: 1.8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn n_waypoints(&self) -> usize {
        self.waypoint_frames.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn input_channels(&self) -> usize {
        self.n_classes + self.n_p
    }

    /// Goal and waypoint maps (inference outputs).
    pub fn goal_channels(&self) -> usize {
        self.n_waypoints() + 1
    }

    /// Spatial extents must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.n_blocks()
    }

    /// 0-based index into the future sequence of each waypoint.
    pub fn waypoint_future_indices(&self) -> Vec<usize> {
        self.waypoint_frames.iter().map(|&w| w - self.n_p - 1).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0 || self.n_f == 0 || self.n_classes == 0 {
            return Err(Error::Config("n_p, n_f and n_classes must be positive".into()));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::Config("encoder_channels must be non-empty and positive".into()));
        }
        if self.decoder_channels.len() != self.encoder_channels.len() {
            return Err(Error::Config(format!(
                "decoder_channels has {} entries, encoder_channels has {}",
                self.decoder_channels.len(),
                self.encoder_channels.len()
            )));
        }
        if self.decoder_channels.contains(&0) || self.center_channels == 0 {
            return Err(Error::Config("decoder and center channels must be positive".into()));
        }
        let mut prev = self.n_p;
        for &w in &self.waypoint_frames {
            if w <= prev || w >= self.n_p + self.n_f {
                return Err(Error::Config(format!(
                    "waypoint frames {:?} must be strictly increasing inside ({}, {})",
                    self.waypoint_frames,
                    self.n_p,
                    self.n_p + self.n_f
                )));
            }
            prev = w;
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Goal head emits goal, waypoints and one auxiliary map per future step.
    Train,
    /// Goal head emits goal and waypoints only, temperature applied.
    Infer,
}

/// 2-D convolution layer with bias.
#[derive(Clone, Debug)]
pub struct Conv<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub padding: usize,
}

impl<T: Scalar> Conv<T> {
    fn new(name: &str, in_c: usize, out_c: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((in_c * k * k) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                .collect()
        };
        let w = draw(out_c * in_c * k * k);
        let b = draw(out_c);
        Conv {
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::from_vec(&[out_c, in_c, k, k], w).unwrap(),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::from_vec(&[out_c], b).unwrap()),
            padding: k / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight.value, &self.bias.value, self.padding)
    }

    /// Accumulates parameter gradients, returns the input gradient.
    fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (gx, gw, gb) = conv2d_backward(x, &self.weight.value, grad_out, self.padding)?;
        self.weight.accumulate_grad(&gw);
        self.bias.accumulate_grad(&gb);
        Ok(gx)
    }

    fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Encoder outputs: the pre-pool feature map of every block (finest first)
/// and the pooled output of the last block.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<Tensor<T>>,
    pub deepest: Tensor<T>,
}

#[derive(Clone, Debug)]
struct EncoderBlock<T> {
    conv1: Conv<T>,
    conv2: Conv<T>,
}

#[derive(Debug)]
struct EncoderTrace<T> {
    inputs: Vec<Tensor<T>>,
    hidden: Vec<Tensor<T>>,
    pool_index: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
struct Encoder<T> {
    blocks: Vec<EncoderBlock<T>>,
}

impl<T: Scalar> Encoder<T> {
    fn new(in_c: usize, channels: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut blocks = Vec::new();
        let mut c = in_c;
        for (i, &out) in channels.iter().enumerate() {
            blocks.push(EncoderBlock {
                conv1: Conv::new(&format!("encoder.{i}.conv1"), c, out, 3, rng),
                conv2: Conv::new(&format!("encoder.{i}.conv2"), out, out, 3, rng),
            });
            c = out;
        }
        Encoder { blocks }
    }

    fn forward(&self, input: &Tensor<T>) -> Result<(FeaturePyramid<T>, EncoderTrace<T>)> {
        let mut x = input.clone();
        let mut levels = Vec::new();
        let mut trace = EncoderTrace {
            inputs: Vec::new(),
            hidden: Vec::new(),
            pool_index: Vec::new(),
        };
        for b in &self.blocks {
            let h = relu(&b.conv1.forward(&x)?);
            let f = relu(&b.conv2.forward(&h)?);
            let (pooled, idx) = maxpool2(&f)?;
            trace.inputs.push(std::mem::replace(&mut x, pooled));
            trace.hidden.push(h);
            trace.pool_index.push(idx);
            levels.push(f);
        }
        Ok((FeaturePyramid { levels, deepest: x }, trace))
    }

    fn backward(
        &mut self,
        pyramid: &FeaturePyramid<T>,
        trace: &EncoderTrace<T>,
        grad_levels: Vec<Tensor<T>>,
        grad_deepest: Tensor<T>,
    ) -> Result<()> {
        let mut grad_pooled = grad_deepest;
        for b in (0..self.blocks.len()).rev() {
            let f = &pyramid.levels[b];
            let mut gf = maxpool2_backward(&grad_pooled, &trace.pool_index[b], f.shape());
            gf.add_assign(&grad_levels[b]);
            let block = &mut self.blocks[b];
            let gh = relu_backward(&trace.hidden[b], &block.conv2.backward(&trace.hidden[b], &relu_backward(f, &gf))?);
            grad_pooled = block.conv1.backward(&trace.inputs[b], &gh)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct DecoderBlock<T> {
    up: Conv<T>,
    conv1: Conv<T>,
    conv2: Conv<T>,
}

#[derive(Debug)]
struct BlockTrace<T> {
    x_in: Tensor<T>,
    upsampled: Tensor<T>,
    merged: Tensor<T>,
    up_channels: usize,
    hidden: Tensor<T>,
    out: Tensor<T>,
}

#[derive(Debug)]
struct DecoderTrace<T> {
    center_in: Tensor<T>,
    center_hidden: Tensor<T>,
    center_out: Tensor<T>,
    blocks: Vec<BlockTrace<T>>,
}

/// Expansion arm: centre block, then per level upsample → conv → merge skip
/// → two convs, then a 1×1 head producing logits.
#[derive(Clone, Debug)]
struct Decoder<T> {
    center1: Conv<T>,
    center2: Conv<T>,
    blocks: Vec<DecoderBlock<T>>,
    head: Conv<T>,
}

impl<T: Scalar> Decoder<T> {
    /// `skip_channels` is ordered coarsest first, matching block order.
    fn new(
        name: &str,
        deepest_c: usize,
        center_c: usize,
        channels: &[usize],
        skip_channels: &[usize],
        out_c: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let center1 = Conv::new(&format!("{name}.center.conv1"), deepest_c, center_c, 3, rng);
        let center2 = Conv::new(&format!("{name}.center.conv2"), center_c, center_c, 3, rng);
        let mut blocks = Vec::new();
        let mut c = center_c;
        for (j, (&out, &skip)) in channels.iter().zip(skip_channels).enumerate() {
            blocks.push(DecoderBlock {
                up: Conv::new(&format!("{name}.{j}.up"), c, out, 3, rng),
                conv1: Conv::new(&format!("{name}.{j}.conv1"), out + skip, out, 3, rng),
                conv2: Conv::new(&format!("{name}.{j}.conv2"), out, out, 3, rng),
            });
            c = out;
        }
        let head = Conv::new(&format!("{name}.head"), c, out_c, 1, rng);
        Decoder {
            center1,
            center2,
            blocks,
            head,
        }
    }

    fn forward(&self, center_in: Tensor<T>, skips: &[Tensor<T>]) -> Result<(Tensor<T>, DecoderTrace<T>)> {
        let center_hidden = relu(&self.center1.forward(&center_in)?);
        let center_out = relu(&self.center2.forward(&center_hidden)?);
        let mut x = center_out.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, skip) in self.blocks.iter().zip(skips) {
            let upsampled = bilinear_upsample2(&x);
            let u = b.up.forward(&upsampled)?;
            let up_channels = u.channels();
            let merged = concat_channels(&u, skip)?;
            let hidden = relu(&b.conv1.forward(&merged)?);
            let out = relu(&b.conv2.forward(&hidden)?);
            blocks.push(BlockTrace {
                x_in: std::mem::replace(&mut x, out.clone()),
                upsampled,
                merged,
                up_channels,
                hidden,
                out,
            });
        }
        let logits = self.head.forward(&x)?;
        Ok((
            logits,
            DecoderTrace {
                center_in,
                center_hidden,
                center_out,
                blocks,
            },
        ))
    }

    /// Returns `(d center_in, d skips)` with skips ordered as in `forward`.
    fn backward(
        &mut self,
        trace: &DecoderTrace<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let head_in = trace.blocks.last().map_or(&trace.center_out, |b| &b.out);
        let mut g = self.head.backward(head_in, grad_logits)?;
        let mut grad_skips = vec![Tensor::zeros(&[0]); self.blocks.len()];
        for j in (0..self.blocks.len()).rev() {
            let t = &trace.blocks[j];
            let b = &mut self.blocks[j];
            let gh = b.conv2.backward(&t.hidden, &relu_backward(&t.out, &g))?;
            let gm = b.conv1.backward(&t.merged, &relu_backward(&t.hidden, &gh))?;
            let (gu, gskip) = concat_channels_backward(&gm, t.up_channels);
            grad_skips[j] = gskip;
            let gup = b.up.backward(&t.upsampled, &gu)?;
            g = bilinear_upsample2_backward(&gup);
            debug_assert_eq!(g.shape(), t.x_in.shape());
        }
        let gch = self
            .center2
            .backward(&trace.center_hidden, &relu_backward(&trace.center_out, &g))?;
        let gin = self
            .center1
            .backward(&trace.center_in, &relu_backward(&trace.center_hidden, &gch))?;
        Ok((gin, grad_skips))
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v: Vec<&Parameter<T>> = Vec::new();
        v.extend(self.center1.params());
        v.extend(self.center2.params());
        for b in &self.blocks {
            v.extend(b.up.params());
            v.extend(b.conv1.params());
            v.extend(b.conv2.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<&mut Parameter<T>> = Vec::new();
        v.extend(self.center1.params_mut());
        v.extend(self.center2.params_mut());
        for b in &mut self.blocks {
            v.extend(b.up.params_mut());
            v.extend(b.conv1.params_mut());
            v.extend(b.conv2.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}

/// Activations kept from a training forward pass.
#[derive(Debug)]
pub struct TrainTrace<T> {
    pyramid: FeaturePyramid<T>,
    encoder: EncoderTrace<T>,
    goal: DecoderTrace<T>,
    traj: DecoderTrace<T>,
    /// Goal-head probabilities: goal/waypoints then auxiliary maps.
    pub goal_probs: Tensor<T>,
    /// Trajectory probabilities, one map per future step.
    pub traj_probs: Tensor<T>,
}

/// The full network.
#[derive(Clone, Debug)]
pub struct YNet<T> {
    config: ModelConfig,
    encoder: Encoder<T>,
    goal_decoder: Decoder<T>,
    traj_decoder: Decoder<T>,
}

impl<T: Scalar> YNet<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let enc = &config.encoder_channels;
        let n = enc.len();
        let deepest_c = enc[n - 1];
        let cond_c = config.goal_channels();
        let skips_goal: Vec<usize> = enc.iter().rev().copied().collect();
        let skips_traj: Vec<usize> = skips_goal.iter().map(|c| c + cond_c).collect();
        let encoder = Encoder::new(config.input_channels(), enc, &mut rng);
        let goal_decoder = Decoder::new(
            "goal",
            deepest_c,
            config.center_channels,
            &config.decoder_channels,
            &skips_goal,
            config.goal_channels() + config.n_f,
            &mut rng,
        );
        let traj_decoder = Decoder::new(
            "traj",
            deepest_c + cond_c,
            config.center_channels,
            &config.decoder_channels,
            &skips_traj,
            config.n_f,
            &mut rng,
        );
        Ok(YNet {
            config,
            encoder,
            goal_decoder,
            traj_decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if !(t > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {t}")));
        }
        self.config.temperature = t;
        Ok(())
    }

    /// All parameters in a fixed order.
    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v: Vec<&Parameter<T>> = Vec::new();
        for b in &self.encoder.blocks {
            v.extend(b.conv1.params());
            v.extend(b.conv2.params());
        }
        v.extend(self.goal_decoder.params());
        v.extend(self.traj_decoder.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<&mut Parameter<T>> = Vec::new();
        for b in &mut self.encoder.blocks {
            v.extend(b.conv1.params_mut());
            v.extend(b.conv2.params_mut());
        }
        v.extend(self.goal_decoder.params_mut());
        v.extend(self.traj_decoder.params_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Same architecture in another precision.
    pub fn cast<U: Scalar>(&self) -> YNet<U> {
        fn conv<T: Scalar, U: Scalar>(c: &Conv<T>) -> Conv<U> {
            Conv {
                weight: c.weight.cast(),
                bias: c.bias.cast(),
                padding: c.padding,
            }
        }
        fn dec<T: Scalar, U: Scalar>(d: &Decoder<T>) -> Decoder<U> {
            Decoder {
                center1: conv(&d.center1),
                center2: conv(&d.center2),
                blocks: d
                    .blocks
                    .iter()
                    .map(|b| DecoderBlock {
                        up: conv(&b.up),
                        conv1: conv(&b.conv1),
                        conv2: conv(&b.conv2),
                    })
                    .collect(),
                head: conv(&d.head),
            }
        }
        YNet {
            config: self.config.clone(),
            encoder: Encoder {
                blocks: self
                    .encoder
                    .blocks
                    .iter()
                    .map(|b| EncoderBlock {
                        conv1: conv(&b.conv1),
                        conv2: conv(&b.conv2),
                    })
                    .collect(),
            },
            goal_decoder: dec(&self.goal_decoder),
            traj_decoder: dec(&self.traj_decoder),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let expected_c = self.config.input_channels();
        if input.shape().len() != 3 || input.channels() != expected_c {
            return Err(Error::shape("encode", input.shape(), &[expected_c, 0, 0]));
        }
        let (h, w) = input.spatial();
        let m = self.config.spatial_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "input extents {h}×{w} must be positive multiples of {m}"
            )));
        }
        Ok(())
    }

    fn check_pyramid(&self, pyramid: &FeaturePyramid<T>) -> Result<()> {
        let enc = &self.config.encoder_channels;
        if pyramid.levels.len() != enc.len()
            || pyramid.levels.iter().zip(enc).any(|(l, &c)| l.channels() != c)
            || pyramid.deepest.channels() != enc[enc.len() - 1]
        {
            return Err(Error::InvalidArgument(
                "feature pyramid does not match the model configuration".into(),
            ));
        }
        Ok(())
    }

    pub fn encode(&self, input: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        self.check_input(input)?;
        Ok(self.encoder.forward(input)?.0)
    }

    fn goal_skips(pyramid: &FeaturePyramid<T>) -> Vec<Tensor<T>> {
        pyramid.levels.iter().rev().cloned().collect()
    }

    fn traj_inputs(
        &self,
        pyramid: &FeaturePyramid<T>,
        cond: &ConditioningPyramid<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let n = pyramid.levels.len();
        if cond.levels.len() != n + 1 {
            return Err(Error::InvalidArgument(format!(
                "conditioning has {} resolutions, decoder needs {}",
                cond.levels.len(),
                n + 1
            )));
        }
        if cond.channels() != self.config.goal_channels() {
            return Err(Error::InvalidArgument(format!(
                "conditioning has {} channels, expected {}",
                cond.channels(),
                self.config.goal_channels()
            )));
        }
        let center = concat_channels(&pyramid.deepest, &cond.levels[n])?;
        let skips = (0..n)
            .rev()
            .map(|l| concat_channels(&pyramid.levels[l], &cond.levels[l]))
            .collect::<Result<Vec<_>>>()?;
        Ok((center, skips))
    }

    /// Goal-head logits (goal/waypoints followed by auxiliary maps).
    pub fn goal_logits(&self, pyramid: &FeaturePyramid<T>) -> Result<Tensor<T>> {
        self.check_pyramid(pyramid)?;
        let (logits, _) = self
            .goal_decoder
            .forward(pyramid.deepest.clone(), &Self::goal_skips(pyramid))?;
        Ok(logits)
    }

    /// Goal/waypoint probability maps ordered earliest waypoint → goal.
    /// Training mode also returns the `n_f` auxiliary maps; inference mode
    /// divides logits by the temperature first.
    pub fn decode_goal(&self, pyramid: &FeaturePyramid<T>, mode: Mode) -> Result<Tensor<T>> {
        let logits = self.goal_logits(pyramid)?;
        Ok(match mode {
            Mode::Train => sigmoid(&logits),
            Mode::Infer => {
                let t = T::from_f64(self.config.temperature);
                sigmoid(&logits.slice_channels(0, self.config.goal_channels()).map(|v| v / t))
            }
        })
    }

    pub fn trajectory_logits(
        &self,
        pyramid: &FeaturePyramid<T>,
        cond: &ConditioningPyramid<T>,
    ) -> Result<Tensor<T>> {
        self.check_pyramid(pyramid)?;
        let (center, skips) = self.traj_inputs(pyramid, cond)?;
        Ok(self.traj_decoder.forward(center, &skips)?.0)
    }

    /// One probability map per future step.
    pub fn decode_trajectory(
        &self,
        pyramid: &FeaturePyramid<T>,
        cond: &ConditioningPyramid<T>,
    ) -> Result<Tensor<T>> {
        Ok(sigmoid(&self.trajectory_logits(pyramid, cond)?))
    }

    /// Encoder followed by both decoders.
    pub fn forward(
        &self,
        input: &Tensor<T>,
        cond: &ConditioningPyramid<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let pyramid = self.encode(input)?;
        Ok((
            self.decode_goal(&pyramid, mode)?,
            self.decode_trajectory(&pyramid, cond)?,
        ))
    }

    /// Training forward pass keeping every activation for [`Self::backward`].
    pub fn forward_train(
        &self,
        input: &Tensor<T>,
        cond: &ConditioningPyramid<T>,
    ) -> Result<TrainTrace<T>> {
        self.check_input(input)?;
        let (pyramid, encoder) = self.encoder.forward(input)?;
        let (goal_logits, goal) = self
            .goal_decoder
            .forward(pyramid.deepest.clone(), &Self::goal_skips(&pyramid))?;
        let (center, skips) = self.traj_inputs(&pyramid, cond)?;
        let (traj_logits, traj) = self.traj_decoder.forward(center, &skips)?;
        Ok(TrainTrace {
            goal_probs: sigmoid(&goal_logits),
            traj_probs: sigmoid(&traj_logits),
            pyramid,
            encoder,
            goal,
            traj,
        })
    }

    /// Back-propagates gradients with respect to the two probability outputs,
    /// accumulating into every parameter's gradient buffer.
    pub fn backward(
        &mut self,
        trace: &TrainTrace<T>,
        grad_goal_probs: &Tensor<T>,
        grad_traj_probs: &Tensor<T>,
    ) -> Result<()> {
        if grad_goal_probs.shape() != trace.goal_probs.shape() {
            return Err(Error::shape("backward goal", grad_goal_probs.shape(), trace.goal_probs.shape()));
        }
        if grad_traj_probs.shape() != trace.traj_probs.shape() {
            return Err(Error::shape("backward traj", grad_traj_probs.shape(), trace.traj_probs.shape()));
        }
        let n = trace.pyramid.levels.len();
        let g_goal = sigmoid_backward(&trace.goal_probs, grad_goal_probs);
        let g_traj = sigmoid_backward(&trace.traj_probs, grad_traj_probs);

        let (gd_goal, gs_goal) = self.goal_decoder.backward(&trace.goal, &g_goal)?;
        let (gd_traj, gs_traj) = self.traj_decoder.backward(&trace.traj, &g_traj)?;

        let deepest_c = trace.pyramid.deepest.channels();
        let mut grad_deepest = gd_goal;
        grad_deepest.add_assign(&concat_channels_backward(&gd_traj, deepest_c).0);

        // skips are ordered coarsest first; levels finest first
        let mut grad_levels = Vec::with_capacity(n);
        for l in 0..n {
            let j = n - 1 - l;
            let c = trace.pyramid.levels[l].channels();
            let mut g = gs_goal[j].clone();
            g.add_assign(&concat_channels_backward(&gs_traj[j], c).0);
            grad_levels.push(g);
        }
        self.encoder
            .backward(&trace.pyramid, &trace.encoder, grad_levels, grad_deepest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::conditioning_pyramid;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_p: 2,
            n_f: 3,
            n_classes: 2,
            waypoint_frames: vec![4],
            encoder_channels: vec![3, 4],
            decoder_channels: vec![4, 3],
            center_channels: 5,
            temperature: 1.0,
            seed: 7,
        }
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.3) * scale).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = tiny();
        c.waypoint_frames = vec![2];
        assert!(c.validate().is_err());
        c.waypoint_frames = vec![5];
        assert!(c.validate().is_err());
        c.waypoint_frames = vec![4, 3];
        c.n_f = 5;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.decoder_channels.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_encoder_shape_trace() {
        let cfg = ModelConfig {
            n_p: 5,
            n_classes: 5,
            ..ModelConfig::default()
        };
        let net = YNet::<f32>::new(cfg).unwrap();
        let input = Tensor::<f32>::full(&[10, 64, 64], 0.1);
        let p = net.encode(&input).unwrap();
        let sizes: Vec<(usize, usize, usize)> = p.levels.iter().map(|l| l.chw()).collect();
        assert_eq!(
            sizes,
            vec![(32, 64, 64), (32, 32, 32), (64, 16, 16), (64, 8, 8), (64, 4, 4)]
        );
        assert_eq!(p.deepest.chw(), (64, 2, 2));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let mut net = YNet::<f64>::new(tiny()).unwrap();
        for p in net.params_mut() {
            if p.name.ends_with("bias") {
                p.value = Tensor::zeros(p.shape());
            }
        }
        let pyr = net.encode(&Tensor::zeros(&[4, 8, 8])).unwrap();
        assert!(pyr.levels.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
        assert!(pyr.deepest.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_contract() {
        let net = YNet::<f64>::new(tiny()).unwrap();
        let input = ramp(&[4, 8, 8], 1.0);
        let pyr = net.encode(&input).unwrap();
        let train = net.decode_goal(&pyr, Mode::Train).unwrap();
        let infer = net.decode_goal(&pyr, Mode::Infer).unwrap();
        assert_eq!(train.chw(), (2 + 3, 8, 8));
        assert_eq!(infer.chw(), (2, 8, 8));
        assert!(train.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let cond = conditioning_pyramid(ramp(&[2, 8, 8], 1.0), 3).unwrap();
        let traj = net.decode_trajectory(&pyr, &cond).unwrap();
        assert_eq!(traj.chw(), (3, 8, 8));
        // same input twice, bit-identical
        assert_eq!(net.forward(&input, &cond, Mode::Infer).unwrap(), net.forward(&input, &cond, Mode::Infer).unwrap());
        // missing a conditioning resolution
        let short = conditioning_pyramid(ramp(&[2, 8, 8], 1.0), 2).unwrap();
        assert!(net.decode_trajectory(&pyr, &short).is_err());
    }

    #[test]
    fn fully_convolutional() {
        let net = YNet::<f32>::new(tiny()).unwrap();
        let count = net.parameter_count();
        for &(h, w) in &[(8usize, 8usize), (16, 24), (32, 8)] {
            let input = Tensor::<f32>::full(&[4, h, w], 0.2);
            let cond = conditioning_pyramid(Tensor::<f32>::full(&[2, h, w], 0.1), 3).unwrap();
            let (g, t) = net.forward(&input, &cond, Mode::Infer).unwrap();
            assert_eq!(g.spatial(), (h, w));
            assert_eq!(t.spatial(), (h, w));
        }
        assert_eq!(net.parameter_count(), count);
        assert!(net.encode(&Tensor::<f32>::full(&[4, 6, 8], 0.2)).is_err());
    }

    #[test]
    fn temperature_divides_logits() {
        let mut net = YNet::<f64>::new(tiny()).unwrap();
        let pyr = net.encode(&ramp(&[4, 8, 8], 1.0)).unwrap();
        let logits = net.goal_logits(&pyr).unwrap();
        net.set_temperature(2.0).unwrap();
        let p = net.decode_goal(&pyr, Mode::Infer).unwrap();
        let z = logits.at(1, 3, 5);
        assert!((p.at(1, 3, 5) - 1.0 / (1.0 + (-z / 2.0).exp())).abs() < 1e-12);
    }
}
