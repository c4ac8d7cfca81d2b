//! The spatial attention point network and its CNN+LSTM baseline.
//!
//! SPAN: an encoder with two convolution blocks that share no weights — one
//! produces feature maps for the decoder skip path, the other feeds the 2D
//! soft-argmax that extracts attention points. A recurrent core maps
//! (points, joints) to the next joint command and to decoder points; the
//! decoder turns those points into Gaussian gates over the skip features and
//! reconstructs the next camera frame.
//!
//! The baseline replaces all of that with conv → flatten → compact feature
//! vector → LSTM, with no explicit spatial coordinates anywhere.

use crate::attention::{apply_attention_weighting, make_heatmap, softargmax2d, AttentionPoints};
use crate::error::{Result, SpanError};
use crate::nn::{conv_out_size, fit2d, Conv2d, Deconv2d, Linear, LstmCell};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(out_ch: usize, kernel: usize, stride: usize) -> ConvSpec {
        ConvSpec {
            out_ch,
            kernel,
            stride,
        }
    }
}

/// Which encoder point set the consistency loss compares against:
/// the points of the current input frame, or (teacher-forced) of the next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GfTarget {
    SameStep,
    NextStep,
}

impl GfTarget {
    pub fn parse(s: &str) -> Result<GfTarget> {
        match s.trim() {
            "same" => Ok(GfTarget::SameStep),
            "next" => Ok(GfTarget::NextStep),
            other => Err(SpanError::Config(format!(
                "unknown gf_target {other:?}, expected same|next"
            ))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            GfTarget::SameStep => "same",
            GfTarget::NextStep => "next",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpanConfig {
    pub image_hw: usize,
    pub image_ch: usize,
    pub joint_dim: usize,
    pub k_points: usize,
    pub encoder_plan: Vec<ConvSpec>,
    pub decoder_plan: Vec<ConvSpec>,
    pub lstm_hidden: usize,
    /// Weight of the point-consistency loss term.
    pub alpha: f64,
    /// Heatmap width in normalized units.
    pub sigma: f64,
    /// Soft-argmax temperature.
    pub beta: f64,
    pub learning_rate: f64,
    pub gf_target: GfTarget,
    /// Baseline bottleneck width.
    pub cnnrnn_feature_dim: usize,
}

impl SpanConfig {
    /// Full-scale configuration for 64×64 frames.
    pub fn default64() -> SpanConfig {
        SpanConfig {
            image_hw: 64,
            image_ch: 3,
            joint_dim: 3,
            k_points: 8,
            encoder_plan: vec![
                ConvSpec::new(16, 5, 2),
                ConvSpec::new(32, 5, 2),
                ConvSpec::new(8, 5, 1),
            ],
            decoder_plan: vec![
                ConvSpec::new(32, 5, 1),
                ConvSpec::new(16, 5, 2),
                ConvSpec::new(3, 5, 2),
            ],
            lstm_hidden: 64,
            alpha: 0.01,
            sigma: 0.1,
            beta: 1.0,
            learning_rate: 1e-3,
            gf_target: GfTarget::SameStep,
            cnnrnn_feature_dim: 15,
        }
    }

    /// Desk-scale configuration for 32×32 frames; small enough to train on
    /// one core in minutes.
    pub fn mini32() -> SpanConfig {
        SpanConfig {
            image_hw: 32,
            image_ch: 3,
            joint_dim: 3,
            k_points: 6,
            encoder_plan: vec![
                ConvSpec::new(8, 3, 2),
                ConvSpec::new(12, 3, 2),
                ConvSpec::new(6, 3, 1),
            ],
            decoder_plan: vec![
                ConvSpec::new(12, 3, 1),
                ConvSpec::new(8, 3, 2),
                ConvSpec::new(3, 5, 2),
            ],
            lstm_hidden: 48,
            alpha: 0.01,
            // the 5×5 gate grid has 0.5 cell spacing in normalized units;
            // a narrower bump would vanish between nodes
            sigma: 0.25,
            beta: 1.0,
            learning_rate: 1e-3,
            gf_target: GfTarget::SameStep,
            cnnrnn_feature_dim: 15,
        }
    }

    /// Miniature configuration for end-to-end gradient checks.
    pub fn tiny16() -> SpanConfig {
        SpanConfig {
            image_hw: 16,
            image_ch: 3,
            joint_dim: 3,
            k_points: 2,
            encoder_plan: vec![ConvSpec::new(3, 3, 2), ConvSpec::new(2, 3, 1)],
            decoder_plan: vec![ConvSpec::new(2, 3, 1), ConvSpec::new(3, 3, 2)],
            lstm_hidden: 8,
            alpha: 0.01,
            sigma: 0.15,
            beta: 1.0,
            learning_rate: 1e-3,
            gf_target: GfTarget::SameStep,
            cnnrnn_feature_dim: 5,
        }
    }

    /// Preset by image size.
    pub fn preset(image_hw: usize) -> Result<SpanConfig> {
        match image_hw {
            64 => Ok(SpanConfig::default64()),
            32 => Ok(SpanConfig::mini32()),
            16 => Ok(SpanConfig::tiny16()),
            other => Err(SpanError::Config(format!(
                "no preset for image size {other}; supply encoder/decoder plans explicitly"
            ))),
        }
    }

    /// LSTM input width: 2K point coordinates plus the joint vector.
    pub fn lstm_input(&self) -> usize {
        2 * self.k_points + self.joint_dim
    }

    /// Spatial size of the encoder output maps.
    pub fn feature_hw(&self) -> Result<usize> {
        let mut hw = self.image_hw;
        for spec in &self.encoder_plan {
            hw = conv_out_size(hw, spec.kernel, spec.stride)?;
        }
        Ok(hw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_points == 0 {
            return Err(SpanError::Config("k_points must be at least 1".into()));
        }
        if self.encoder_plan.is_empty() || self.decoder_plan.is_empty() {
            return Err(SpanError::Config("encoder/decoder plans must be non-empty".into()));
        }
        let last_enc = self.encoder_plan.last().unwrap();
        if last_enc.out_ch != self.k_points {
            return Err(SpanError::Config(format!(
                "encoder must end with k_points={} channels, plan ends with {}",
                self.k_points, last_enc.out_ch
            )));
        }
        let last_dec = self.decoder_plan.last().unwrap();
        if last_dec.out_ch != self.image_ch {
            return Err(SpanError::Config(format!(
                "decoder must end with {} channels, plan ends with {}",
                self.image_ch, last_dec.out_ch
            )));
        }
        let fhw = self.feature_hw().map_err(|_| {
            SpanError::Config(format!(
                "encoder plan collapses a {0}×{0} image below the kernel size",
                self.image_hw
            ))
        })?;
        if fhw < 2 {
            return Err(SpanError::Config(format!(
                "encoder output spatial size {fhw} is too small for point extraction (need ≥ 2)"
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(SpanError::Parameter(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(SpanError::Parameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.beta > 0.0) {
            return Err(SpanError::Parameter(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(SpanError::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Recurrent state threaded through an episode.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

/// Everything one forward step produces.
pub struct StepOutput {
    pub image_pred: Tensor,
    pub joints_pred: Tensor,
    pub points_enc: AttentionPoints,
    pub points_dec: AttentionPoints,
    pub features: Tensor,
    pub state: LstmState,
}

fn conv_stack(plan: &[ConvSpec], in_ch: usize, rng: &mut Rng) -> Vec<Conv2d> {
    let mut layers = Vec::with_capacity(plan.len());
    let mut ch = in_ch;
    for spec in plan {
        layers.push(Conv2d::new(ch, spec.out_ch, spec.kernel, spec.stride, rng));
        ch = spec.out_ch;
    }
    layers
}

fn deconv_stack(plan: &[ConvSpec], in_ch: usize, rng: &mut Rng) -> Vec<Deconv2d> {
    let mut layers = Vec::with_capacity(plan.len());
    let mut ch = in_ch;
    for spec in plan {
        layers.push(Deconv2d::new(ch, spec.out_ch, spec.kernel, spec.stride, rng));
        ch = spec.out_ch;
    }
    layers
}

/// ReLU between layers, linear final layer.
fn run_conv_stack(tape: &Tape, layers: &[Conv2d], x: &Tensor) -> Result<Tensor> {
    let mut cur = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        cur = layer.forward(tape, &cur)?;
        if i + 1 < layers.len() {
            cur = tape.relu(&cur)?;
        }
    }
    Ok(cur)
}

fn run_deconv_stack(tape: &Tape, layers: &[Deconv2d], x: &Tensor) -> Result<Tensor> {
    let mut cur = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        cur = layer.forward(tape, &cur)?;
        if i + 1 < layers.len() {
            cur = tape.relu(&cur)?;
        }
    }
    Ok(cur)
}

pub struct SpanModel {
    pub cfg: SpanConfig,
    /// Image-feature extraction block: skip features for the decoder.
    pub img_block: Vec<Conv2d>,
    /// Feature-area extraction block: feeds the 2D soft-argmax. Shares no
    /// parameters with the image-feature block.
    pub area_block: Vec<Conv2d>,
    pub input_lin: Linear,
    pub lstm: LstmCell,
    pub output_lin: Linear,
    pub decoder: Vec<Deconv2d>,
    feature_hw: usize,
}

impl SpanModel {
    pub fn new(cfg: &SpanConfig, seed: u64) -> Result<SpanModel> {
        cfg.validate()?;
        let feature_hw = cfg.feature_hw()?;
        let mut rng = Rng::seed_from(seed);
        let d = cfg.lstm_input();
        Ok(SpanModel {
            img_block: conv_stack(&cfg.encoder_plan, cfg.image_ch, &mut rng),
            area_block: conv_stack(&cfg.encoder_plan, cfg.image_ch, &mut rng),
            input_lin: Linear::new(d, d, &mut rng),
            lstm: LstmCell::new(d, cfg.lstm_hidden, &mut rng),
            output_lin: Linear::new(cfg.lstm_hidden, cfg.joint_dim + 2 * cfg.k_points, &mut rng),
            decoder: deconv_stack(&cfg.decoder_plan, cfg.k_points, &mut rng),
            cfg: cfg.clone(),
            feature_hw,
        })
    }

    pub fn feature_hw(&self) -> usize {
        self.feature_hw
    }

    pub fn zero_state(&self) -> LstmState {
        let (h, c) = self.lstm.zero_state();
        LstmState { h, c }
    }

    /// Named parameters in a stable order (checkpoint layout).
    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.img_block.iter().enumerate() {
            out.push((format!("span.img_block.{i}.weight"), l.weight.clone()));
            out.push((format!("span.img_block.{i}.bias"), l.bias.clone()));
        }
        for (i, l) in self.area_block.iter().enumerate() {
            out.push((format!("span.area_block.{i}.weight"), l.weight.clone()));
            out.push((format!("span.area_block.{i}.bias"), l.bias.clone()));
        }
        out.push(("span.input_lin.weight".into(), self.input_lin.weight.clone()));
        out.push(("span.input_lin.bias".into(), self.input_lin.bias.clone()));
        out.push(("span.lstm.w".into(), self.lstm.w.clone()));
        out.push(("span.lstm.u".into(), self.lstm.u.clone()));
        out.push(("span.lstm.b".into(), self.lstm.b.clone()));
        out.push(("span.output_lin.weight".into(), self.output_lin.weight.clone()));
        out.push(("span.output_lin.bias".into(), self.output_lin.bias.clone()));
        for (i, l) in self.decoder.iter().enumerate() {
            out.push((format!("span.decoder.{i}.weight"), l.weight.clone()));
            out.push((format!("span.decoder.{i}.bias"), l.bias.clone()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Encoder: skip features from the image block, attention points from
    /// the area block.
    pub fn encoder_forward(&self, tape: &Tape, image: &Tensor) -> Result<(Tensor, AttentionPoints)> {
        let expect = vec![self.cfg.image_ch, self.cfg.image_hw, self.cfg.image_hw];
        if image.shape() != expect {
            return Err(SpanError::ShapeMismatch {
                op: "encoder_forward",
                lhs: image.shape(),
                rhs: expect,
            });
        }
        let features = run_conv_stack(tape, &self.img_block, image)?;
        let area = run_conv_stack(tape, &self.area_block, image)?;
        let points = softargmax2d(tape, &area, self.cfg.beta)?;
        Ok((features, points))
    }

    /// Recurrent core: (points, joints, state) → (next joints, decoder
    /// points, next state). Decoder points are tanh-squashed into [−1, 1].
    pub fn recurrent_forward(
        &self,
        tape: &Tape,
        points: &AttentionPoints,
        joints: &Tensor,
        state: &LstmState,
    ) -> Result<(Tensor, AttentionPoints, LstmState)> {
        let k2 = 2 * self.cfg.k_points;
        if joints.shape() != [self.cfg.joint_dim] {
            return Err(SpanError::ShapeMismatch {
                op: "recurrent_forward",
                lhs: joints.shape(),
                rhs: vec![self.cfg.joint_dim],
            });
        }
        if state.h.shape() != [self.cfg.lstm_hidden] || state.c.shape() != [self.cfg.lstm_hidden] {
            return Err(SpanError::Contract(format!(
                "lstm state shape {:?}/{:?}, expected [{}]",
                state.h.shape(),
                state.c.shape(),
                self.cfg.lstm_hidden
            )));
        }
        let flat = tape.reshape(&points.tensor, &[k2])?;
        let x = tape.concat(&[&flat, joints])?;
        let x = self.input_lin.forward(tape, &x)?;
        let (h, c) = self.lstm.step(tape, &x, &state.h, &state.c)?;
        let head = self.output_lin.forward(tape, &h)?;
        let joints_pred = tape.slice(&head, 0, self.cfg.joint_dim)?;
        let raw = tape.slice(&head, self.cfg.joint_dim, k2)?;
        let squashed = tape.tanh(&raw)?;
        let dec_points = tape.reshape(&squashed, &[self.cfg.k_points, 2])?;
        Ok((
            joints_pred,
            AttentionPoints::from_tensor(dec_points)?,
            LstmState { h, c },
        ))
    }

    /// Decoder: gate the skip features with heatmaps rendered from the
    /// recurrent points, upsample, squash to (0, 1), and fit to the frame.
    pub fn decoder_forward(
        &self,
        tape: &Tape,
        features: &Tensor,
        points: &AttentionPoints,
    ) -> Result<Tensor> {
        self.decoder_forward_inner(tape, features, points, None)
    }

    /// Test hook: override every heatmap cell with a constant gate value.
    #[doc(hidden)]
    pub fn decoder_forward_with_gate(
        &self,
        tape: &Tape,
        features: &Tensor,
        points: &AttentionPoints,
        gate: f64,
    ) -> Result<Tensor> {
        self.decoder_forward_inner(tape, features, points, Some(gate))
    }

    fn decoder_forward_inner(
        &self,
        tape: &Tape,
        features: &Tensor,
        points: &AttentionPoints,
        gate_override: Option<f64>,
    ) -> Result<Tensor> {
        let fhw = self.feature_hw;
        let expect = vec![self.cfg.k_points, fhw, fhw];
        if features.shape() != expect {
            return Err(SpanError::ShapeMismatch {
                op: "decoder_forward",
                lhs: features.shape(),
                rhs: expect,
            });
        }
        let heatmaps = match gate_override {
            None => make_heatmap(tape, &points.tensor, fhw, fhw, self.cfg.sigma)?,
            Some(v) => Tensor::from_vec(
                vec![v; self.cfg.k_points * fhw * fhw],
                &[self.cfg.k_points, fhw, fhw],
            )?,
        };
        let gated = apply_attention_weighting(tape, features, &heatmaps)?;
        let up = run_deconv_stack(tape, &self.decoder, &gated)?;
        let fitted = fit2d(tape, &up, self.cfg.image_hw, self.cfg.image_hw)?;
        tape.sigmoid(&fitted)
    }

    /// Full step: encoder → recurrent → decoder.
    pub fn step(
        &self,
        tape: &Tape,
        image: &Tensor,
        joints: &Tensor,
        state: &LstmState,
    ) -> Result<StepOutput> {
        let (features, points_enc) = self.encoder_forward(tape, image)?;
        let (joints_pred, points_dec, state) =
            self.recurrent_forward(tape, &points_enc, joints, state)?;
        let image_pred = self.decoder_forward(tape, &features, &points_dec)?;
        Ok(StepOutput {
            image_pred,
            joints_pred,
            points_enc,
            points_dec,
            features,
            state,
        })
    }
}

/// The Eq-by-Eq loss decomposition of one step.
pub struct StepLosses {
    pub total: Tensor,
    pub image: Tensor,
    pub joints: Tensor,
    pub points: Tensor,
}

/// g = g_i + g_a + α·g_f.
///
/// g_i and g_a are mean squared errors over the image and joint vector;
/// g_f averages squared coordinate differences between the decoder points
/// and a reference encoder point set over all 2K coordinates. Gradients
/// flow into both point sets (pass a detached reference to cut one side).
pub fn loss_total(
    tape: &Tape,
    step: &StepOutput,
    image_next: &Tensor,
    joints_next: &Tensor,
    f_reference: &Tensor,
    alpha: f64,
) -> Result<StepLosses> {
    if alpha < 0.0 {
        return Err(SpanError::Parameter(format!(
            "loss weight alpha must be non-negative, got {alpha}"
        )));
    }
    let g_i = tape.mse(&step.image_pred, image_next)?;
    let g_a = tape.mse(&step.joints_pred, joints_next)?;
    let diff = tape.sub(&step.points_dec.tensor, f_reference)?;
    let sq = tape.mul(&diff, &diff)?;
    let n = f_reference.numel() as f64;
    let g_f = tape.scale(&tape.sum(&sq)?, 1.0 / n)?;
    let total = tape.add(&tape.add(&g_i, &g_a)?, &tape.scale(&g_f, alpha)?)?;
    Ok(StepLosses {
        total,
        image: g_i,
        joints: g_a,
        points: g_f,
    })
}

/// CNN+LSTM baseline: no attention points, a flattened bottleneck instead.
pub struct CnnRnnModel {
    pub cfg: SpanConfig,
    pub encoder: Vec<Conv2d>,
    pub feat_lin: Linear,
    pub lstm: LstmCell,
    pub joints_head: Linear,
    pub image_lin: Linear,
    pub decoder: Vec<Deconv2d>,
    feature_hw: usize,
}

impl CnnRnnModel {
    pub fn new(cfg: &SpanConfig, seed: u64) -> Result<CnnRnnModel> {
        cfg.validate()?;
        let feature_hw = cfg.feature_hw()?;
        let flat = cfg.k_points * feature_hw * feature_hw;
        let mut rng = Rng::seed_from(seed);
        let d = cfg.cnnrnn_feature_dim + cfg.joint_dim;
        Ok(CnnRnnModel {
            encoder: conv_stack(&cfg.encoder_plan, cfg.image_ch, &mut rng),
            feat_lin: Linear::new(flat, cfg.cnnrnn_feature_dim, &mut rng),
            lstm: LstmCell::new(d, cfg.lstm_hidden, &mut rng),
            joints_head: Linear::new(cfg.lstm_hidden, cfg.joint_dim, &mut rng),
            image_lin: Linear::new(cfg.lstm_hidden, flat, &mut rng),
            decoder: deconv_stack(&cfg.decoder_plan, cfg.k_points, &mut rng),
            cfg: cfg.clone(),
            feature_hw,
        })
    }

    pub fn zero_state(&self) -> LstmState {
        let (h, c) = self.lstm.zero_state();
        LstmState { h, c }
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("cnnrnn.encoder.{i}.weight"), l.weight.clone()));
            out.push((format!("cnnrnn.encoder.{i}.bias"), l.bias.clone()));
        }
        out.push(("cnnrnn.feat_lin.weight".into(), self.feat_lin.weight.clone()));
        out.push(("cnnrnn.feat_lin.bias".into(), self.feat_lin.bias.clone()));
        out.push(("cnnrnn.lstm.w".into(), self.lstm.w.clone()));
        out.push(("cnnrnn.lstm.u".into(), self.lstm.u.clone()));
        out.push(("cnnrnn.lstm.b".into(), self.lstm.b.clone()));
        out.push(("cnnrnn.joints_head.weight".into(), self.joints_head.weight.clone()));
        out.push(("cnnrnn.joints_head.bias".into(), self.joints_head.bias.clone()));
        out.push(("cnnrnn.image_lin.weight".into(), self.image_lin.weight.clone()));
        out.push(("cnnrnn.image_lin.bias".into(), self.image_lin.bias.clone()));
        for (i, l) in self.decoder.iter().enumerate() {
            out.push((format!("cnnrnn.decoder.{i}.weight"), l.weight.clone()));
            out.push((format!("cnnrnn.decoder.{i}.bias"), l.bias.clone()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// One step: (image, joints, state) → (next image, next joints, state).
    pub fn step(
        &self,
        tape: &Tape,
        image: &Tensor,
        joints: &Tensor,
        state: &LstmState,
    ) -> Result<(Tensor, Tensor, LstmState)> {
        let expect = vec![self.cfg.image_ch, self.cfg.image_hw, self.cfg.image_hw];
        if image.shape() != expect {
            return Err(SpanError::ShapeMismatch {
                op: "cnnrnn_step",
                lhs: image.shape(),
                rhs: expect,
            });
        }
        let fhw = self.feature_hw;
        let flat_n = self.cfg.k_points * fhw * fhw;
        let conv = run_conv_stack(tape, &self.encoder, image)?;
        let flat = tape.reshape(&conv, &[flat_n])?;
        let feat = self.feat_lin.forward(tape, &flat)?;
        let x = tape.concat(&[&feat, joints])?;
        let (h, c) = self.lstm.step(tape, &x, &state.h, &state.c)?;
        let joints_pred = self.joints_head.forward(tape, &h)?;
        let img_seed = self.image_lin.forward(tape, &h)?;
        let img_maps = tape.reshape(&img_seed, &[self.cfg.k_points, fhw, fhw])?;
        let up = run_deconv_stack(tape, &self.decoder, &img_maps)?;
        let fitted = fit2d(tape, &up, self.cfg.image_hw, self.cfg.image_hw)?;
        let image_pred = tape.sigmoid(&fitted)?;
        Ok((image_pred, joints_pred, LstmState { h, c }))
    }
}

/// Which model a training run builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Span,
    /// SPAN trained with α = 0: the consistency term reported but inert.
    SpanAlpha0,
    CnnRnn,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<ModelKind> {
        match s.trim() {
            "span" => Ok(ModelKind::Span),
            "span_alpha0" => Ok(ModelKind::SpanAlpha0),
            "cnnrnn" => Ok(ModelKind::CnnRnn),
            other => Err(SpanError::Config(format!(
                "unknown model {other:?}, expected span|span_alpha0|cnnrnn"
            ))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Span => "span",
            ModelKind::SpanAlpha0 => "span_alpha0",
            ModelKind::CnnRnn => "cnnrnn",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.tag())
    }
}

/// A built model of either architecture.
pub enum Model {
    Span(SpanModel),
    CnnRnn(CnnRnnModel),
}

/// Uniform step output for training and closed-loop control.
pub struct ModelStep {
    pub image_pred: Tensor,
    pub joints_pred: Tensor,
    pub points_enc: Option<AttentionPoints>,
    pub points_dec: Option<AttentionPoints>,
    pub state: LstmState,
}

impl Model {
    pub fn build(kind: ModelKind, cfg: &SpanConfig, seed: u64) -> Result<Model> {
        let mut cfg = cfg.clone();
        if kind == ModelKind::SpanAlpha0 {
            cfg.alpha = 0.0;
        }
        match kind {
            ModelKind::Span | ModelKind::SpanAlpha0 => Ok(Model::Span(SpanModel::new(&cfg, seed)?)),
            ModelKind::CnnRnn => Ok(Model::CnnRnn(CnnRnnModel::new(&cfg, seed)?)),
        }
    }

    pub fn cfg(&self) -> &SpanConfig {
        match self {
            Model::Span(m) => &m.cfg,
            Model::CnnRnn(m) => &m.cfg,
        }
    }

    pub fn is_span(&self) -> bool {
        matches!(self, Model::Span(_))
    }

    pub fn zero_state(&self) -> LstmState {
        match self {
            Model::Span(m) => m.zero_state(),
            Model::CnnRnn(m) => m.zero_state(),
        }
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        match self {
            Model::Span(m) => m.params(),
            Model::CnnRnn(m) => m.params(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Span(m) => m.param_count(),
            Model::CnnRnn(m) => m.param_count(),
        }
    }

    pub fn step(
        &self,
        tape: &Tape,
        image: &Tensor,
        joints: &Tensor,
        state: &LstmState,
    ) -> Result<ModelStep> {
        match self {
            Model::Span(m) => {
                let out = m.step(tape, image, joints, state)?;
                Ok(ModelStep {
                    image_pred: out.image_pred,
                    joints_pred: out.joints_pred,
                    points_enc: Some(out.points_enc),
                    points_dec: Some(out.points_dec),
                    state: out.state,
                })
            }
            Model::CnnRnn(m) => {
                let (image_pred, joints_pred, state) = m.step(tape, image, joints, state)?;
                Ok(ModelStep {
                    image_pred,
                    joints_pred,
                    points_enc: None,
                    points_dec: None,
                    state,
                })
            }
        }
    }
}
