//! Teacher-forced training and closed-loop evaluation.
//!
//! Training unrolls a model over each demonstration with ground-truth
//! inputs at every step, averages the per-step loss, and applies one Adam
//! update per episode. Evaluation closes the loop: the model's predicted
//! joint command drives the simulator while hidden states and attention
//! points are logged for analysis.

use std::collections::BTreeMap;

use crate::checkpoint::ParamRecord;
use crate::error::{Result, SpanError};
use crate::model::{loss_total, LstmState, Model, ModelKind, SpanConfig};
use crate::nn::Adam;
use crate::rng::{derive_seed, Rng};
use crate::sim::{
    self, block_centroid_px, end_effector, render, success_check, BlockPos, Episode, Situation,
    SimConfig, TeacherPolicy,
};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct EpochLoss {
    pub total: f64,
    pub image: f64,
    pub joints: f64,
    pub points: f64,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainRun {
    pub model: String,
    pub epochs: usize,
    pub seed: u64,
    pub param_count: usize,
    pub losses: Vec<EpochLoss>,
    pub config: BTreeMap<String, String>,
}

/// On-disk `train_run.json`: the run log plus the checkpoint filename,
/// enough for eval to rebuild the exact model.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct RunFile {
    #[serde(flatten)]
    pub run: TrainRun,
    pub checkpoint: String,
}

fn validate_dataset(episodes: &[Episode], cfg: &SpanConfig) -> Result<()> {
    if episodes.is_empty() {
        return Err(SpanError::Config("dataset is empty".into()));
    }
    let t = episodes[0].len();
    let j = episodes[0].joints[0].len();
    for ep in episodes {
        if ep.len() != t || ep.is_empty() {
            return Err(SpanError::Config("episodes differ in length".into()));
        }
        if ep.image_hw != cfg.image_hw {
            return Err(SpanError::Config(format!(
                "dataset frames are {0}×{0}, config expects {1}×{1}",
                ep.image_hw, cfg.image_hw
            )));
        }
        if ep.joints[0].len() != j || j != cfg.joint_dim {
            return Err(SpanError::Config(format!(
                "dataset joint dim {} does not match config {}",
                ep.joints[0].len(),
                cfg.joint_dim
            )));
        }
    }
    if t < 2 {
        return Err(SpanError::Config("episodes must have at least 2 frames".into()));
    }
    Ok(())
}

struct LossAgg {
    total: f64,
    image: f64,
    joints: f64,
    points: f64,
    steps: usize,
}

/// Unroll one episode with teacher forcing, returning the tape, the mean
/// step loss (as a tape scalar) and logged components.
fn unroll_episode(model: &Model, ep: &Episode, cfg: &SpanConfig) -> Result<(Tape, Tensor, LossAgg)> {
    let tape = Tape::new();
    let steps = ep.len() - 1;
    let mut state = model.zero_state();
    let mut total = Tensor::scalar(0.0);
    let mut agg = LossAgg {
        total: 0.0,
        image: 0.0,
        joints: 0.0,
        points: 0.0,
        steps,
    };
    // for the next-step consistency target: decoder points awaiting the
    // encoder points of the following frame
    let mut pending_dec: Option<Tensor> = None;

    for t in 0..steps {
        let image = ep.image_tensor(t);
        let joints = ep.joints_tensor(t);
        let image_next = ep.image_tensor(t + 1);
        let joints_next = ep.joints_tensor(t + 1);

        match model {
            Model::Span(m) => {
                let out = m.step(&tape, &image, &joints, &state)?;
                let (g_i, g_a) = (
                    tape.mse(&out.image_pred, &image_next)?,
                    tape.mse(&out.joints_pred, &joints_next)?,
                );
                let mut step_loss = tape.add(&g_i, &g_a)?;
                let g_f_value;
                match cfg.gf_target {
                    crate::model::GfTarget::SameStep => {
                        let l = loss_total(
                            &tape,
                            &out,
                            &image_next,
                            &joints_next,
                            &out.points_enc.tensor,
                            cfg.alpha,
                        )?;
                        step_loss = l.total;
                        g_f_value = l.points.item();
                        agg.image += l.image.item();
                        agg.joints += l.joints.item();
                    }
                    crate::model::GfTarget::NextStep => {
                        // pair the previous step's decoder points with this
                        // frame's encoder points
                        if let Some(prev_dec) = pending_dec.take() {
                            let diff = tape.sub(&prev_dec, &out.points_enc.tensor)?;
                            let sq = tape.mul(&diff, &diff)?;
                            let n = prev_dec.numel() as f64;
                            let g_f = tape.scale(&tape.sum(&sq)?, 1.0 / n)?;
                            step_loss = tape.add(&step_loss, &tape.scale(&g_f, cfg.alpha)?)?;
                            agg.points += g_f.item();
                        }
                        pending_dec = Some(out.points_dec.tensor.clone());
                        g_f_value = 0.0;
                        agg.image += g_i.item();
                        agg.joints += g_a.item();
                    }
                }
                agg.points += g_f_value;
                total = tape.add(&total, &step_loss)?;
                agg.total += step_loss.item();
                state = out.state;
            }
            Model::CnnRnn(m) => {
                let (image_pred, joints_pred, next_state) =
                    m.step(&tape, &image, &joints, &state)?;
                let g_i = tape.mse(&image_pred, &image_next)?;
                let g_a = tape.mse(&joints_pred, &joints_next)?;
                let step_loss = tape.add(&g_i, &g_a)?;
                agg.image += g_i.item();
                agg.joints += g_a.item();
                agg.total += step_loss.item();
                total = tape.add(&total, &step_loss)?;
                state = next_state;
            }
        }
    }

    // final pending pair consumes the last frame's encoder points
    if let (Model::Span(m), Some(prev_dec)) = (model, pending_dec) {
        let last = ep.image_tensor(ep.len() - 1);
        let (_, points) = m.encoder_forward(&tape, &last)?;
        let diff = tape.sub(&prev_dec, &points.tensor)?;
        let sq = tape.mul(&diff, &diff)?;
        let n = prev_dec.numel() as f64;
        let g_f = tape.scale(&tape.sum(&sq)?, 1.0 / n)?;
        let scaled = tape.scale(&g_f, cfg.alpha)?;
        total = tape.add(&total, &scaled)?;
        agg.points += g_f.item();
        agg.total += scaled.item();
    }

    let mean = tape.scale(&total, 1.0 / steps as f64)?;
    Ok((tape, mean, agg))
}

/// Train a model on demonstration episodes.
pub fn train(
    episodes: &[Episode],
    cfg: &SpanConfig,
    kind: ModelKind,
    epochs: usize,
    seed: u64,
) -> Result<(Model, TrainRun)> {
    validate_dataset(episodes, cfg)?;
    let mut cfg = cfg.clone();
    if kind == ModelKind::SpanAlpha0 {
        cfg.alpha = 0.0;
    }
    let model = Model::build(kind, &cfg, derive_seed(seed, 1))?;
    let mut adam = Adam::new(
        model.params().into_iter().map(|(_, t)| t).collect(),
        cfg.learning_rate,
    );
    let mut order_rng = Rng::seed_from(derive_seed(seed, 2));
    let mut losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..episodes.len()).collect();

    for _epoch in 0..epochs {
        order_rng.shuffle(&mut order);
        let mut epoch = EpochLoss::default();
        for &idx in &order {
            let ep = &episodes[idx];
            let (tape, mean_loss, agg) = unroll_episode(&model, ep, &cfg)?;
            tape.backward(&mean_loss)?;
            adam.step()?;
            adam.zero_grads();
            let n = agg.steps as f64;
            epoch.total += agg.total / n;
            epoch.image += agg.image / n;
            epoch.joints += agg.joints / n;
            epoch.points += agg.points / n;
        }
        let m = episodes.len() as f64;
        losses.push(EpochLoss {
            total: epoch.total / m,
            image: epoch.image / m,
            joints: epoch.joints / m,
            points: epoch.points / m,
        });
    }

    let run = TrainRun {
        model: kind.tag().to_string(),
        epochs,
        seed,
        param_count: model.param_count(),
        losses,
        config: BTreeMap::new(),
    };
    Ok((model, run))
}

// ── closed-loop evaluation ──────────────────────────────────────────────

#[derive(Clone, Debug, serde::Serialize)]
pub struct EvalRow {
    pub position: char,
    pub situation: String,
    pub trial: usize,
    pub success: bool,
    /// First step at which the block was grasped, or the episode length.
    pub steps: usize,
    /// End-effector to block-center distance at the final step.
    pub final_distance: f64,
}

/// Per-trial logs used by the analyses.
#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub position: BlockPos,
    pub situation: Situation,
    pub trial: usize,
    /// LSTM hidden vector at every control step.
    pub hidden: Vec<Vec<f64>>,
    /// Encoder attention points (normalized) at every control step.
    pub enc_points: Vec<Vec<(f64, f64)>>,
    /// Decoder points at every control step.
    pub dec_points: Vec<Vec<(f64, f64)>>,
    /// Ground-truth block centroid in pixels at every control step.
    pub block_px: Vec<(f64, f64)>,
    /// Rendered frames, retained only when overlays were requested.
    pub frames: Option<Vec<Vec<f32>>>,
}

#[derive(Debug)]
pub struct EvalReport {
    pub model: String,
    pub situation: Situation,
    pub trials: usize,
    pub positions: Vec<BlockPos>,
    pub rows: Vec<EvalRow>,
    pub traces: Vec<EpisodeTrace>,
}

impl EvalReport {
    pub fn successes_at(&self, pos: BlockPos) -> usize {
        self.rows
            .iter()
            .filter(|r| r.position == pos.label() && r.success)
            .count()
    }

    pub fn success_counts(&self) -> BTreeMap<char, usize> {
        let mut map = BTreeMap::new();
        for pos in &self.positions {
            map.insert(pos.label(), self.successes_at(*pos));
        }
        map
    }

    pub fn total_successes(&self) -> usize {
        self.rows.iter().filter(|r| r.success).count()
    }
}

/// What drives the arm during evaluation.
pub enum EvalPolicy<'a> {
    Model(&'a Model),
    /// The scripted expert wrapped as a policy; the success-rate oracle.
    Teacher,
}

pub struct EvalOptions {
    pub positions: Vec<BlockPos>,
    pub trials: usize,
    pub situation: Situation,
    pub master_seed: u64,
    pub workers: usize,
    pub keep_frames: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            positions: BlockPos::ALL.to_vec(),
            trials: 10,
            situation: Situation::Nominal,
            master_seed: 0,
            workers: 1,
            keep_frames: false,
        }
    }
}

/// Start-state seed for (position, trial); independent of situation so a
/// trial's start pose is comparable across situations.
fn trial_seed(master: u64, pos: BlockPos, trial: usize) -> u64 {
    derive_seed(master, 7_000_000 + pos.index() as u64 * 1000 + trial as u64)
}

fn run_trial(
    policy: &EvalPolicy<'_>,
    sim_cfg: &SimConfig,
    pos: BlockPos,
    trial: usize,
    situation: Situation,
    master_seed: u64,
    keep_frames: bool,
) -> Result<(EvalRow, EpisodeTrace)> {
    let mut state = sim::reset(sim_cfg, pos, situation, trial_seed(master_seed, pos, trial));
    let teacher = match policy {
        EvalPolicy::Teacher => Some(TeacherPolicy::new(sim_cfg, &state)?),
        EvalPolicy::Model(_) => None,
    };
    let mut lstm_state: Option<LstmState> = match policy {
        EvalPolicy::Model(m) => Some(m.zero_state()),
        EvalPolicy::Teacher => None,
    };

    let steps = sim_cfg.episode_len - 1;
    let mut trace = EpisodeTrace {
        position: pos,
        situation,
        trial,
        hidden: Vec::with_capacity(steps),
        enc_points: Vec::with_capacity(steps),
        dec_points: Vec::with_capacity(steps),
        block_px: Vec::with_capacity(steps),
        frames: if keep_frames { Some(Vec::new()) } else { None },
    };
    let mut grasp_step = None;

    for t in 0..steps {
        let cmd = match policy {
            EvalPolicy::Teacher => teacher.as_ref().unwrap().command(sim_cfg, t),
            EvalPolicy::Model(model) => {
                let tape = Tape::inference();
                let frame = render(sim_cfg, &state);
                if let Some(buf) = trace.frames.as_mut() {
                    buf.push(frame.with_data(|d| d.iter().map(|&v| v as f32).collect()));
                }
                let joints = Tensor::from_vec(state.joints(), &[sim_cfg.joint_dim()])?;
                let out = model.step(&tape, &frame, &joints, lstm_state.as_ref().unwrap())?;
                trace.hidden.push(out.state.h.to_vec());
                if let Some(p) = &out.points_enc {
                    trace.enc_points.push(p.coords());
                }
                if let Some(p) = &out.points_dec {
                    trace.dec_points.push(p.coords());
                }
                trace.block_px.push(block_centroid_px(sim_cfg, &state));
                lstm_state = Some(out.state);
                out.joints_pred.to_vec()
            }
        };
        state = sim::step(sim_cfg, &state, &cmd)?;
        if state.grasped && grasp_step.is_none() {
            grasp_step = Some(t + 1);
        }
    }

    let ee = end_effector(sim_cfg, &state);
    let final_distance =
        ((ee.0 - state.block.0).powi(2) + (ee.1 - state.block.1).powi(2)).sqrt();
    let row = EvalRow {
        position: pos.label(),
        situation: situation.tag().to_string(),
        trial,
        success: success_check(sim_cfg, &state),
        steps: grasp_step.unwrap_or(sim_cfg.episode_len),
        final_distance,
    };
    Ok((row, trace))
}

/// Closed-loop success-rate protocol: `trials` rollouts per position with
/// trial-indexed start jitter. `workers > 1` splits (position, trial) pairs
/// across threads, each with its own model clone and sim state; results are
/// merged in deterministic order.
pub fn evaluate_closed_loop(
    policy: &EvalPolicy<'_>,
    sim_cfg: &SimConfig,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut jobs: Vec<(BlockPos, usize)> = Vec::new();
    for &pos in &opts.positions {
        for trial in 0..opts.trials {
            jobs.push((pos, trial));
        }
    }

    let mut results: Vec<(EvalRow, EpisodeTrace)> = if opts.workers <= 1 {
        jobs.iter()
            .map(|&(pos, trial)| {
                run_trial(
                    policy,
                    sim_cfg,
                    pos,
                    trial,
                    opts.situation,
                    opts.master_seed,
                    opts.keep_frames,
                )
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        // models hold Rc internally, so clone parameters per worker instead
        // of sharing
        let snapshot: Option<(ModelKind, SpanConfig, Vec<ParamRecord>)> = match policy {
            EvalPolicy::Model(m) => Some((
                if m.is_span() {
                    ModelKind::Span
                } else {
                    ModelKind::CnnRnn
                },
                m.cfg().clone(),
                snapshot_params(m),
            )),
            EvalPolicy::Teacher => None,
        };
        let chunks: Vec<Vec<(BlockPos, usize)>> = jobs
            .chunks(jobs.len().div_ceil(opts.workers))
            .map(|c| c.to_vec())
            .collect();
        let mut flat = Vec::new();
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for chunk in &chunks {
                let snapshot = &snapshot;
                handles.push(scope.spawn(move || -> Result<Vec<(EvalRow, EpisodeTrace)>> {
                    let local_model = match snapshot {
                        Some((kind, cfg, records)) => {
                            let m = Model::build(*kind, cfg, 0)?;
                            crate::checkpoint::apply(records, &m.params())?;
                            Some(m)
                        }
                        None => None,
                    };
                    let local_policy = match &local_model {
                        Some(m) => EvalPolicy::Model(m),
                        None => EvalPolicy::Teacher,
                    };
                    chunk
                        .iter()
                        .map(|&(pos, trial)| {
                            run_trial(
                                &local_policy,
                                sim_cfg,
                                pos,
                                trial,
                                opts.situation,
                                opts.master_seed,
                                opts.keep_frames,
                            )
                        })
                        .collect()
                }));
            }
            for h in handles {
                let part = h.join().map_err(|_| {
                    SpanError::Numeric("evaluation worker panicked".into())
                })??;
                flat.extend(part);
            }
            Ok(())
        })?;
        flat
    };

    results.sort_by_key(|(row, _)| (row.position, row.trial));
    let (rows, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(EvalReport {
        model: match policy {
            EvalPolicy::Model(m) => if m.is_span() { "span" } else { "cnnrnn" }.to_string(),
            EvalPolicy::Teacher => "teacher".to_string(),
        },
        situation: opts.situation,
        trials: opts.trials,
        positions: opts.positions.clone(),
        rows,
        traces,
    })
}

/// Copy a model's parameters into portable records (worker clones,
/// checkpoints).
pub fn snapshot_params(model: &Model) -> Vec<ParamRecord> {
    model
        .params()
        .iter()
        .map(|(name, t)| ParamRecord {
            name: name.clone(),
            shape: t.shape(),
            data: t.to_vec(),
        })
        .collect()
}

/// Rebuild a model from checkpoint records.
pub fn model_from_records(
    kind: ModelKind,
    cfg: &SpanConfig,
    records: &[ParamRecord],
) -> Result<Model> {
    let model = Model::build(kind, cfg, 0)?;
    crate::checkpoint::apply(records, &model.params())?;
    Ok(model)
}
