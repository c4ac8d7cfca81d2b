//! Browser demo bindings. Three interactive panels over the core crate:
//! a simulator playground that scrubs teacher rollouts, a soft-argmax lab
//! for the attention mechanics, and closed-loop rollouts of a model
//! checkpoint (seeded random weights until one is loaded).
//!
//! Everything returns plain RGBA byte buffers; the page draws them with
//! `ImageData`, no framework involved.

use wasm_bindgen::prelude::*;

use span_core::analysis::render_attention_overlay;
use span_core::attention::{make_heatmap, norm_to_pixel, softargmax2d};
use span_core::checkpoint;
use span_core::config::Config;
use span_core::model::{Model, ModelKind, SpanConfig};
use span_core::sim::{
    self, render, BlockPos, Episode, SimConfig, SimState, Situation, TeacherPolicy,
};
use span_core::tensor::{Tape, Tensor};
use span_core::train::RunFile;

fn rgb_to_rgba(rgb: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(rgb.len() / 3 * 4);
    for px in rgb.chunks_exact(3) {
        out.extend_from_slice(px);
        out.push(255);
    }
    out
}

/// [3, H, W] float image → RGBA bytes.
pub fn frame_to_rgba(data: &[f64], hw: usize) -> Vec<u8> {
    rgb_to_rgba(&span_core::dataset::to_rgb8(data, hw, hw))
}

fn parse_inputs(position: &str, situation: &str) -> Result<(BlockPos, Situation), JsError> {
    let pos = BlockPos::parse(position).map_err(|e| JsError::new(&e.to_string()))?;
    let sit = Situation::parse(situation).map_err(|e| JsError::new(&e.to_string()))?;
    Ok((pos, sit))
}

// ── panel 1: simulator playground ───────────────────────────────────────

/// A precomputed teacher rollout, scrubbable frame by frame.
#[wasm_bindgen]
pub struct SimDemo {
    episode: Episode,
    hw: usize,
    success: bool,
}

#[wasm_bindgen]
impl SimDemo {
    /// Run the scripted teacher at a block position ("A".."E") under a
    /// situation ("i".."iv").
    #[wasm_bindgen(constructor)]
    pub fn new(image_size: usize, position: &str, situation: &str, seed: u64) -> Result<SimDemo, JsError> {
        let (pos, sit) = parse_inputs(position, situation)?;
        let cfg = SimConfig::new(image_size);
        let episode = sim::run_teacher_episode(&cfg, pos, sit, seed)
            .map_err(|e| JsError::new(&e.to_string()))?;
        // replay to learn the outcome
        let mut state = sim::reset(&cfg, pos, sit, seed);
        let teacher = TeacherPolicy::new(&cfg, &state).map_err(|e| JsError::new(&e.to_string()))?;
        for t in 0..cfg.episode_len - 1 {
            state = sim::step(&cfg, &state, &teacher.command(&cfg, t))
                .map_err(|e| JsError::new(&e.to_string()))?;
        }
        Ok(SimDemo {
            episode,
            hw: image_size,
            success: sim::success_check(&cfg, &state),
        })
    }

    pub fn frames(&self) -> usize {
        self.episode.len()
    }

    pub fn size(&self) -> usize {
        self.hw
    }

    pub fn success(&self) -> bool {
        self.success
    }

    /// RGBA bytes of frame t.
    pub fn frame_rgba(&self, t: usize) -> Vec<u8> {
        let t = t.min(self.episode.len() - 1);
        let data: Vec<f64> = self.episode.images[t].iter().map(|&v| v as f64).collect();
        frame_to_rgba(&data, self.hw)
    }

    /// Joint vector [shoulder, elbow, aperture] at frame t.
    pub fn joints(&self, t: usize) -> Vec<f64> {
        let t = t.min(self.episode.len() - 1);
        self.episode.joints[t].iter().map(|&v| v as f64).collect()
    }
}

// ── panel 2: soft-argmax lab ────────────────────────────────────────────

/// Paint spikes on a feature map, watch the extracted point and its
/// regenerated heatmap move.
#[wasm_bindgen]
pub struct AttentionLab {
    hw: usize,
    map: Vec<f64>,
    beta: f64,
    sigma: f64,
}

#[wasm_bindgen]
impl AttentionLab {
    #[wasm_bindgen(constructor)]
    pub fn new(hw: usize) -> AttentionLab {
        AttentionLab {
            hw,
            map: vec![0.0; hw * hw],
            beta: 1.0,
            sigma: 0.1,
        }
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta.max(1e-3);
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma.max(1e-3);
    }

    pub fn clear(&mut self) {
        self.map.fill(0.0);
    }

    /// Add a Gaussian bump of the given amplitude centered at (row, col).
    pub fn add_spike(&mut self, row: usize, col: usize, amplitude: f64) {
        let hw = self.hw;
        let spread = (hw as f64 / 16.0).max(1.0);
        for r in 0..hw {
            for c in 0..hw {
                let d2 = ((r as f64 - row as f64).powi(2) + (c as f64 - col as f64).powi(2))
                    / (2.0 * spread * spread);
                self.map[r * hw + c] += amplitude * (-d2).exp();
            }
        }
    }

    /// Extracted point as [x, y, row, col].
    pub fn point(&self) -> Result<Vec<f64>, JsError> {
        let tape = Tape::inference();
        let fm = Tensor::from_vec(self.map.clone(), &[1, self.hw, self.hw])
            .map_err(|e| JsError::new(&e.to_string()))?;
        let pts = softargmax2d(&tape, &fm, self.beta).map_err(|e| JsError::new(&e.to_string()))?;
        let (x, y) = pts.coords()[0];
        let (r, c) = norm_to_pixel(x, y, self.hw, self.hw);
        Ok(vec![x, y, r, c])
    }

    /// The painted feature map as a grayscale RGBA image.
    pub fn map_rgba(&self) -> Vec<u8> {
        let lo = self.map.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-9);
        let mut out = Vec::with_capacity(self.map.len() * 4);
        for v in &self.map {
            let g = (255.0 * (v - lo) / span) as u8;
            out.extend_from_slice(&[g, g, g, 255]);
        }
        out
    }

    /// Heatmap regenerated from the extracted point, colormapped RGBA.
    pub fn heatmap_rgba(&self) -> Result<Vec<u8>, JsError> {
        let tape = Tape::inference();
        let fm = Tensor::from_vec(self.map.clone(), &[1, self.hw, self.hw])
            .map_err(|e| JsError::new(&e.to_string()))?;
        let pts = softargmax2d(&tape, &fm, self.beta).map_err(|e| JsError::new(&e.to_string()))?;
        let hm = make_heatmap(&tape, &pts.tensor, self.hw, self.hw, self.sigma)
            .map_err(|e| JsError::new(&e.to_string()))?;
        let mut out = Vec::with_capacity(self.hw * self.hw * 4);
        hm.with_data(|d| {
            for &v in d.iter() {
                // dark blue → warm yellow ramp
                let r = (255.0 * v) as u8;
                let g = (190.0 * v) as u8;
                let b = (60.0 + 100.0 * (1.0 - v)) as u8;
                out.extend_from_slice(&[r, g, b, 255]);
            }
        });
        Ok(out)
    }
}

// ── panel 3: closed-loop policy rollout ─────────────────────────────────

/// Drive the simulator with a model step by step, drawing attention
/// overlays. Starts with seeded random weights; `load_checkpoint` swaps in
/// trained parameters.
#[wasm_bindgen]
pub struct PolicyDemo {
    model: Model,
    sim_cfg: SimConfig,
    state: SimState,
    lstm: span_core::model::LstmState,
    t: usize,
    last_enc: Vec<(f64, f64)>,
    last_dec: Vec<(f64, f64)>,
}

#[wasm_bindgen]
impl PolicyDemo {
    /// Untrained model at the preset for `image_size` (32 or 64 work well).
    #[wasm_bindgen(constructor)]
    pub fn new(image_size: usize, position: &str, situation: &str, seed: u64) -> Result<PolicyDemo, JsError> {
        let (pos, sit) = parse_inputs(position, situation)?;
        let span_cfg = SpanConfig::preset(image_size).map_err(|e| JsError::new(&e.to_string()))?;
        let model = Model::build(ModelKind::Span, &span_cfg, seed)
            .map_err(|e| JsError::new(&e.to_string()))?;
        let sim_cfg = SimConfig::new(image_size);
        let state = sim::reset(&sim_cfg, pos, sit, seed);
        let lstm = model.zero_state();
        Ok(PolicyDemo {
            model,
            sim_cfg,
            state,
            lstm,
            t: 0,
            last_enc: Vec::new(),
            last_dec: Vec::new(),
        })
    }

    /// Replace the model with a trained checkpoint plus its train_run.json.
    pub fn load_checkpoint(&mut self, ckpt_bytes: &[u8], run_json: &str) -> Result<(), JsError> {
        let run: RunFile =
            serde_json::from_str(run_json).map_err(|e| JsError::new(&e.to_string()))?;
        let mut cfg = Config::new();
        for (k, v) in &run.run.config {
            cfg.set(k, v).map_err(|e| JsError::new(&e.to_string()))?;
        }
        let span_cfg = cfg.span_config().map_err(|e| JsError::new(&e.to_string()))?;
        let kind = ModelKind::parse(&run.run.model).map_err(|e| JsError::new(&e.to_string()))?;
        let records = checkpoint::load_bytes(ckpt_bytes, "uploaded checkpoint")
            .map_err(|e| JsError::new(&e.to_string()))?;
        let model = span_core::train::model_from_records(kind, &span_cfg, &records)
            .map_err(|e| JsError::new(&e.to_string()))?;
        let pos = self.state.block_pos.label().to_string();
        let sit = self.state.situation.tag().to_string();
        self.model = model;
        self.sim_cfg = SimConfig::new(span_cfg.image_hw);
        self.reset(&pos, &sit, 1)?;
        Ok(())
    }

    pub fn reset(&mut self, position: &str, situation: &str, seed: u64) -> Result<(), JsError> {
        let (pos, sit) = parse_inputs(position, situation)?;
        self.state = sim::reset(&self.sim_cfg, pos, sit, seed);
        self.lstm = self.model.zero_state();
        self.t = 0;
        self.last_enc.clear();
        self.last_dec.clear();
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.sim_cfg.image_hw
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t + 1 >= self.sim_cfg.episode_len
    }

    pub fn grasped(&self) -> bool {
        self.state.grasped
    }

    pub fn success(&self) -> bool {
        sim::success_check(&self.sim_cfg, &self.state)
    }

    /// Advance one control step: render, model forward, command the sim.
    pub fn step(&mut self) -> Result<(), JsError> {
        if self.done() {
            return Ok(());
        }
        let tape = Tape::inference();
        let frame = render(&self.sim_cfg, &self.state);
        let joints = Tensor::from_vec(self.state.joints(), &[self.sim_cfg.joint_dim()])
            .map_err(|e| JsError::new(&e.to_string()))?;
        let out = self
            .model
            .step(&tape, &frame, &joints, &self.lstm)
            .map_err(|e| JsError::new(&e.to_string()))?;
        self.last_enc = out.points_enc.as_ref().map(|p| p.coords()).unwrap_or_default();
        self.last_dec = out.points_dec.as_ref().map(|p| p.coords()).unwrap_or_default();
        self.lstm = out.state;
        self.state = sim::step(&self.sim_cfg, &self.state, &out.joints_pred.to_vec())
            .map_err(|e| JsError::new(&e.to_string()))?;
        self.t += 1;
        Ok(())
    }

    /// Current frame with attention overlay, RGBA.
    pub fn frame_rgba(&self) -> Result<Vec<u8>, JsError> {
        let frame = render(&self.sim_cfg, &self.state);
        let rgb = render_attention_overlay(&frame, &self.last_enc, &self.last_dec)
            .map_err(|e| JsError::new(&e.to_string()))?;
        Ok(rgb_to_rgba(&rgb))
    }
}
