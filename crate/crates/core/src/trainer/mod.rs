//! Coarse-to-fine training. The coarse stage initializes geometry from
//! pseudo-depth with uniformly drawn pixels; the fine stage optimizes the
//! photometric objective with loss-guided region sampling.

pub mod ablation;
mod adam;
pub mod loss;
mod step;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{init_params, Checkpoint, FieldParams, NetConfig};
use crate::renderer::SamplingConfig;
use crate::sampler::{init_weights, region_areas, sample_pixels, uniform_pixels, update_weights, RegionWeights, SamplingRule, WeightLog, DEFAULT_EMA_RATE};
use crate::scene_synth::{Dataset, Split};
use crate::util::{hash_json, write_json};

pub use adam::{Adam, LearningRate};
pub use loss::{aggregate_regions, guidance_loss, PixelTargets, RegionAggregation, RegionLoss};
pub use step::{evaluate_batch, prepare_batch, Batch, Evaluation, GeometrySupervisionBatch, GuidanceSettings};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_LOG: &str = "train_log.csv";
pub const WEIGHT_LOG: &str = "sampler_weights.csv";
pub const CONFIG_FILE: &str = "train.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Fine,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
        })
    }
}

/// When pseudo-depth enters the parameter-update loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSupervision {
    /// Never; pseudo-depth only steers sampling.
    None,
    /// Coarse stage only.
    #[default]
    InitOnly,
    /// Both stages.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub use_sve: bool,
    pub compress_sve: bool,
    pub depth_supervision: DepthSupervision,
    pub use_ais: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags { use_sve: true, compress_sve: true, depth_supervision: DepthSupervision::InitOnly, use_ais: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rgb: f64,
    pub mask: f64,
    pub eikonal: f64,
    /// Coarse-stage rendered-depth term (and fine stage under full supervision).
    pub depth: f64,
    /// Coarse-stage |SDF| at pseudo-surface points.
    pub surface_sdf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rgb: 1.0, mask: 0.1, eikonal: 0.1, depth: 0.1, surface_sdf: 1.0 }
    }
}

/// Loss weights in effect for one step.
pub type TermWeights = LossWeights;

/// Architecture used for training at desk scale. `k = 0` takes K from the dataset.
pub fn toy_net_config() -> NetConfig {
    NetConfig {
        k: 0,
        k_prime: 0,
        pe_levels_generator: 4,
        pe_levels_deform: 4,
        pe_levels_field: 6,
        integrating_width: 32,
        shortcut_width: 16,
        deform_width: 32,
        sdf_width: 64,
        sdf_hidden_layers: 2,
        feature_width: 16,
        color_width: 32,
        color_hidden_layers: 2,
        ..NetConfig::default()
    }
}

/// Deserializes a partial JSON object on top of `base`.
fn overlay<'de, D, T>(base: T, d: D) -> std::result::Result<T, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Serialize + serde::de::DeserializeOwned,
{
    use serde::de::Error as _;
    let patch = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
    let mut merged = match serde_json::to_value(base).map_err(D::Error::custom)? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("configs serialize to objects"),
    };
    merged.extend(patch);
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(D::Error::custom)
}

fn net_over_toy<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<NetConfig, D::Error> {
    overlay(toy_net_config(), d)
}

fn sampling_over_toy<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<SamplingConfig, D::Error> {
    overlay(toy_sampling(), d)
}

pub fn toy_sampling() -> SamplingConfig {
    SamplingConfig { n_coarse: 32, n_importance: 16, up_sample_steps: 2, perturb: true }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub coarse_steps: u64,
    pub fine_steps: u64,
    pub rays_per_step: usize,
    /// Uniform points in the scene bounds per step for the eikonal term, on
    /// top of the ray samples.
    pub eikonal_points: usize,
    pub learning_rate: LearningRate,
    /// Weight of the photometric part of the guidance loss.
    pub lambda1: f64,
    /// Weight of the depth part of the guidance loss.
    pub lambda2: f64,
    pub loss_weights: LossWeights,
    pub ablation: AblationFlags,
    pub sampling_rule: SamplingRule,
    pub region_aggregation: RegionAggregation,
    pub ema_rate: f64,
    /// Fields left out fall back to [`toy_sampling`].
    #[serde(deserialize_with = "sampling_over_toy")]
    pub sampling: SamplingConfig,
    /// Fields left out fall back to [`toy_net_config`].
    #[serde(deserialize_with = "net_over_toy")]
    pub net: NetConfig,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            coarse_steps: 200,
            fine_steps: 800,
            rays_per_step: 256,
            eikonal_points: 128,
            learning_rate: LearningRate { initial: 2e-3, final_rate: 1e-4 },
            lambda1: 1.0,
            lambda2: 0.1,
            loss_weights: LossWeights::default(),
            ablation: AblationFlags::default(),
            sampling_rule: SamplingRule::default(),
            region_aggregation: RegionAggregation::default(),
            ema_rate: DEFAULT_EMA_RATE,
            sampling: toy_sampling(),
            net: toy_net_config(),
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.loss_weights;
        let all = [w.rgb, w.mask, w.eikonal, w.depth, w.surface_sdf, self.lambda1, self.lambda2];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::TrainConfig("loss weights must be finite and non-negative".into()));
        }
        if self.rays_per_step == 0 {
            return Err(Error::TrainConfig("rays_per_step must be >= 1".into()));
        }
        let lr = self.learning_rate;
        if !(lr.initial > 0.0 && lr.final_rate > 0.0) {
            return Err(Error::TrainConfig("learning rates must be positive".into()));
        }
        if !(self.ema_rate > 0.0 && self.ema_rate <= 1.0) {
            return Err(Error::TrainConfig("ema_rate must lie in (0, 1]".into()));
        }
        if self.sampling.n_coarse < 2 {
            return Err(Error::TrainConfig("sampling.n_coarse must be >= 2".into()));
        }
        Ok(())
    }

    /// The network architecture for a dataset with expression dimension `k`,
    /// with the conditioning switches taken from the ablation flags.
    pub fn resolve_net(&self, k: usize) -> Result<NetConfig> {
        if self.net.k != 0 && self.net.k != k {
            return Err(Error::TrainConfig(format!("net.k = {} does not match the dataset's K = {k}", self.net.k)));
        }
        let mut net = self.net.clone();
        net.k = k;
        net.use_sve = self.ablation.use_sve;
        net.compress_sve = self.ablation.compress_sve;
        net.validate()?;
        Ok(net)
    }

    pub fn total_steps(&self) -> u64 {
        self.coarse_steps + self.fine_steps
    }

    pub fn stage_at(&self, step: u64) -> Stage {
        if step < self.coarse_steps {
            Stage::Coarse
        } else {
            Stage::Fine
        }
    }

    pub fn term_weights(&self, stage: Stage) -> TermWeights {
        let w = self.loss_weights;
        let ds = self.ablation.depth_supervision;
        match stage {
            Stage::Coarse => TermWeights {
                depth: if ds == DepthSupervision::None { 0.0 } else { w.depth },
                surface_sdf: if ds == DepthSupervision::None { 0.0 } else { w.surface_sdf },
                ..w
            },
            Stage::Fine => TermWeights {
                depth: if ds == DepthSupervision::Full { w.depth } else { 0.0 },
                surface_sdf: 0.0,
                ..w
            },
        }
    }

    /// Identifies the training trajectory: the config (minus checkpoint
    /// cadence) together with the dataset's scene.
    pub fn config_hash(&self, scene_hash: &str) -> String {
        let mut c = self.clone();
        c.checkpoint_every = 0;
        hash_json(&(c, scene_hash))
    }
}

/// Loss terms of one step, the weights they were combined with and the
/// per-region guidance losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub stage: Stage,
    pub total: f64,
    pub rgb: f64,
    pub mask_bce: f64,
    pub eikonal: f64,
    pub depth: f64,
    pub surface_sdf: f64,
    pub weights: TermWeights,
    pub per_region: Vec<RegionLoss>,
}

impl LossBreakdown {
    pub fn weighted_sum(&self) -> f64 {
        let w = &self.weights;
        w.rgb * self.rgb + w.mask * self.mask_bce + w.eikonal * self.eikonal + w.depth * self.depth + w.surface_sdf * self.surface_sdf
    }

    pub const CSV_HEADER: &'static str = "step,stage,total,rgb,mask_bce,eikonal,depth,surface_sdf";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.step, self.stage, self.total, self.rgb, self.mask_bce, self.eikonal, self.depth, self.surface_sdf
        )
    }
}

/// Trainer state beyond the network parameters, persisted in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainerExtra {
    adam_t: u64,
    region_weights: RegionWeights,
    scene_hash: String,
    k: usize,
    train_config: TrainConfig,
}

pub struct Trainer<'a> {
    pub dataset: &'a Dataset,
    pub config: TrainConfig,
    pub params: FieldParams<f32>,
    pub optimizer: Adam,
    pub weights: RegionWeights,
    /// Number of completed steps.
    pub step: u64,
    pub verbose: bool,
    train_ids: Vec<usize>,
    config_hash: String,
    epoch_order: Option<(u64, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = config.resolve_net(dataset.manifest.k)?;
        let params = init_params::<f32>(config.seed, &net)?;
        let mut weights = init_weights(dataset.manifest.n_region)?;
        weights.alpha = config.ema_rate;
        let train_ids = dataset.manifest.split_ids(Split::Train);
        if train_ids.is_empty() {
            return Err(Error::Dataset("no training frames".into()));
        }
        let config_hash = config.config_hash(&dataset.manifest.scene_config_hash);
        Ok(Trainer {
            dataset,
            optimizer: Adam::new(params.n_params()),
            params,
            weights,
            step: 0,
            verbose: false,
            train_ids,
            config_hash,
            epoch_order: None,
            config,
        })
    }

    /// Continues the run recorded in `ckpt`; refuses checkpoints written under
    /// a different configuration or dataset.
    pub fn resume(dataset: &'a Dataset, config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(dataset, config)?;
        if ckpt.manifest.config_hash != t.config_hash {
            return Err(Error::ConfigHash(format!(
                "checkpoint was written by config {} but the current config is {}",
                ckpt.manifest.config_hash, t.config_hash
            )));
        }
        let extra: TrainerExtra = serde_json::from_value(ckpt.manifest.extra.clone())
            .map_err(|e| Error::Checkpoint(format!("trainer state: {e}")))?;
        t.params = ckpt.params()?;
        let n = t.params.n_params();
        let m = ckpt.array("adam.m").ok_or_else(|| Error::Checkpoint("missing adam.m".into()))?;
        let v = ckpt.array("adam.v").ok_or_else(|| Error::Checkpoint("missing adam.v".into()))?;
        if m.len() != n || v.len() != n {
            return Err(Error::Checkpoint("optimizer state size mismatch".into()));
        }
        t.optimizer.m = m.to_vec();
        t.optimizer.v = v.to_vec();
        t.optimizer.t = extra.adam_t;
        t.weights = extra.region_weights;
        t.step = ckpt.manifest.step;
        Ok(t)
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let stage = if self.step == 0 { "init".to_string() } else { self.config.stage_at(self.step - 1).to_string() };
        let extra = TrainerExtra {
            adam_t: self.optimizer.t,
            region_weights: self.weights.clone(),
            scene_hash: self.dataset.manifest.scene_config_hash.clone(),
            k: self.dataset.manifest.k,
            train_config: self.config.clone(),
        };
        Checkpoint::new(
            &self.params,
            self.step,
            &stage,
            hash_json(&(self.config.seed, self.step)),
            self.config_hash.clone(),
            vec![("adam.m".into(), self.optimizer.m.clone()), ("adam.v".into(), self.optimizer.v.clone())],
            serde_json::to_value(extra).expect("serializable trainer state"),
        )
    }

    /// Independent random stream for one step, so resumed runs replay exactly.
    fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        rng
    }

    /// Training frames are visited in a fresh shuffled order every epoch.
    fn frame_for_step(&mut self, step: u64) -> usize {
        let n = self.train_ids.len() as u64;
        let epoch = step / n;
        if self.epoch_order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
            rng.set_stream(epoch);
            let mut order = self.train_ids.clone();
            order.shuffle(&mut rng);
            self.epoch_order = Some((epoch, order));
        }
        self.epoch_order.as_ref().expect("order set").1[(step % n) as usize]
    }

    fn guidance(&self) -> GuidanceSettings {
        GuidanceSettings { lambda1: self.config.lambda1, lambda2: self.config.lambda2, n_regions: self.dataset.manifest.n_region }
    }

    fn frame_index(&self, frame_id: usize) -> Result<usize> {
        self.dataset
            .frames
            .iter()
            .position(|f| f.frame_id == frame_id)
            .ok_or_else(|| Error::Dataset(format!("frame {frame_id} missing")))
    }

    /// Builds the batch the next step would use, without updating anything.
    pub fn next_batch(&mut self) -> Result<Batch> {
        let step = self.step;
        let stage = self.config.stage_at(step);
        let frame_id = self.frame_for_step(step);
        let frame = &self.dataset.frames[self.frame_index(frame_id)?];
        let mut rng = self.step_rng(step);
        let n = self.config.rays_per_step;
        let samples = match (stage, self.config.ablation.use_ais) {
            (Stage::Fine, true) => sample_pixels(frame, &self.weights, n, self.config.sampling_rule, &mut rng)?,
            _ => uniform_pixels(frame, n, &mut rng),
        };
        let pixels: Vec<(usize, usize)> = samples.iter().map(|s| (s.u, s.v)).collect();
        prepare_batch(
            &self.params,
            frame,
            &pixels,
            stage,
            &self.config.sampling,
            self.config.eikonal_points,
            self.dataset.manifest.bound_radius,
            self.dataset.manifest.scene.background,
            &mut rng,
        )
    }

    fn apply(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let weights = self.config.term_weights(batch.stage);
        let eval = evaluate_batch(&self.params, batch, &weights, &self.guidance(), true)?;
        let grads = eval.grads.expect("gradients requested");
        let lr = self.config.learning_rate.at(self.step, self.config.total_steps());
        self.optimizer.step(&mut self.params, &grads, lr);
        let mut loss = eval.loss;
        loss.step = self.step;
        Ok(loss)
    }

    /// One geometry-initialization step on uniformly drawn pixels.
    pub fn coarse_step(&mut self) -> Result<LossBreakdown> {
        let batch = self.next_batch()?;
        let loss = self.apply(&batch)?;
        self.step += 1;
        Ok(loss)
    }

    /// One fine-stage step; with region sampling enabled, the region weights
    /// are then updated from this step's guidance losses.
    pub fn fine_step(&mut self) -> Result<LossBreakdown> {
        let batch = self.next_batch()?;
        let loss = self.apply(&batch)?;
        if self.config.ablation.use_ais {
            let frame = &self.dataset.frames[self.frame_index(batch.frame_id)?];
            let areas = region_areas(&frame.region_map, self.weights.n_regions())?;
            let losses = aggregate_regions(&loss.per_region, self.config.region_aggregation);
            self.weights = update_weights(&self.weights, &losses, &areas)?;
        }
        self.step += 1;
        Ok(loss)
    }

    pub fn step_once(&mut self) -> Result<LossBreakdown> {
        match self.config.stage_at(self.step) {
            Stage::Coarse => self.coarse_step(),
            Stage::Fine => self.fine_step(),
        }
    }

    /// Runs the remaining steps, returning the loss of every step taken.
    pub fn run(&mut self, mut logs: Option<&mut TrainLogs>, checkpoint_dir: Option<&Path>) -> Result<Vec<LossBreakdown>> {
        let mut history = Vec::new();
        let every = self.config.checkpoint_every;
        while !self.is_done() {
            let loss = self.step_once()?;
            if let Some(l) = logs.as_deref_mut() {
                l.record(&loss, &self.weights)?;
            }
            if self.verbose && (self.step % 100 == 0 || self.is_done()) {
                eprintln!("step {:>6} [{}] loss {:.5} rgb {:.5}", loss.step, loss.stage, loss.total, loss.rgb);
            }
            history.push(loss);
            if let Some(dir) = checkpoint_dir {
                if every > 0 && self.step % every == 0 && !self.is_done() {
                    if let Some(l) = logs.as_deref_mut() {
                        l.flush()?;
                    }
                    self.checkpoint().save(dir)?;
                }
            }
        }
        if let Some(l) = logs.as_deref_mut() {
            l.flush()?;
        }
        if let Some(dir) = checkpoint_dir {
            self.checkpoint().save(dir)?;
        }
        Ok(history)
    }
}

/// Per-step CSV logs of losses and sampler weights.
pub struct TrainLogs {
    loss: std::io::BufWriter<std::fs::File>,
    loss_path: PathBuf,
    weights: WeightLog,
}

/// Drops data rows whose step is `>= step`, keeping the header.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.is_file() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0 || line.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < step);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

impl TrainLogs {
    /// Opens the logs in `dir`; when resuming at `resume_step`, rows from
    /// later steps are discarded first.
    pub fn open(dir: &Path, n_regions: usize, resume_step: Option<u64>) -> Result<Self> {
        let loss_path = dir.join(LOSS_LOG);
        let weight_path = dir.join(WEIGHT_LOG);
        let append = resume_step.is_some();
        if let Some(step) = resume_step {
            truncate_log(&loss_path, step)?;
            truncate_log(&weight_path, step + 1)?;
        }
        let exists = append && loss_path.is_file();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(&loss_path)
            .map_err(|e| Error::io(&loss_path, e))?;
        let mut loss = std::io::BufWriter::new(file);
        if !exists {
            writeln!(loss, "{}", LossBreakdown::CSV_HEADER).map_err(|e| Error::io(&loss_path, e))?;
        }
        Ok(TrainLogs { loss, loss_path, weights: WeightLog::create(&weight_path, n_regions, append)? })
    }

    pub fn record(&mut self, loss: &LossBreakdown, weights: &RegionWeights) -> Result<()> {
        writeln!(self.loss, "{}", loss.csv_row()).map_err(|e| Error::io(&self.loss_path, e))?;
        if loss.stage == Stage::Fine {
            self.weights.record(weights)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.loss.flush().map_err(|e| Error::io(&self.loss_path, e))?;
        self.weights.flush()
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub resumed_from: Option<u64>,
    pub final_loss: Option<LossBreakdown>,
    pub checkpoint_dir: PathBuf,
    pub params: FieldParams<f32>,
}

/// Trains into `out_dir` (config, checkpoint, CSV logs), resuming from an
/// existing checkpoint there when its configuration matches.
pub fn train(dataset: &Dataset, config: &TrainConfig, out_dir: &Path, verbose: bool) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
    let (mut trainer, resumed_from) = if Checkpoint::exists(&ckpt_dir) {
        let ckpt = Checkpoint::load(&ckpt_dir)?;
        let t = Trainer::resume(dataset, config.clone(), &ckpt)?;
        let s = t.step;
        (t, Some(s))
    } else {
        (Trainer::new(dataset, config.clone())?, None)
    };
    trainer.verbose = verbose;
    write_json(&out_dir.join(CONFIG_FILE), config)?;
    let mut logs = TrainLogs::open(out_dir, dataset.manifest.n_region, resumed_from)?;
    let history = trainer.run(Some(&mut logs), Some(&ckpt_dir))?;
    Ok(TrainSummary {
        steps: trainer.step,
        resumed_from,
        final_loss: history.last().cloned(),
        checkpoint_dir: ckpt_dir,
        params: trainer.params.clone(),
    })
}
