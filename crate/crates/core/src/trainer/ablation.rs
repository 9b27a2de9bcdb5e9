//! Ablation suite: the full method against five reduced variants, each
//! trained from the same seeds on the same dataset and scored on the
//! held-out split.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{DepthSupervision, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::eval::{evaluate, geometry_error, EvalOptions};
use crate::renderer::SamplingConfig;
use crate::scene_synth::{Dataset, SceneDefinition, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    WithoutSve,
    SveWithoutCompression,
    WithoutDs,
    DsFull,
    WithoutAis,
    Full,
}

impl AblationVariant {
    /// Table order: baselines first, full method last.
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::WithoutSve,
        AblationVariant::SveWithoutCompression,
        AblationVariant::WithoutDs,
        AblationVariant::DsFull,
        AblationVariant::WithoutAis,
        AblationVariant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::WithoutSve => "w/o SVE",
            AblationVariant::SveWithoutCompression => "SVE w/o compression",
            AblationVariant::WithoutDs => "w/o DS",
            AblationVariant::DsFull => "DS-full",
            AblationVariant::WithoutAis => "w/o AIS",
            AblationVariant::Full => "Ours",
        }
    }

    /// `base` with this variant's switches applied on top of the full method's.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.ablation = Default::default();
        match self {
            AblationVariant::WithoutSve => c.ablation.use_sve = false,
            AblationVariant::SveWithoutCompression => c.ablation.compress_sve = false,
            AblationVariant::WithoutDs => c.ablation.depth_supervision = DepthSupervision::None,
            AblationVariant::DsFull => c.ablation.depth_supervision = DepthSupervision::Full,
            AblationVariant::WithoutAis => c.ablation.use_ais = false,
            AblationVariant::Full => {}
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSettings {
    pub seeds: Vec<u64>,
    pub variants: Vec<AblationVariant>,
    pub eval_sampling: SamplingConfig,
    /// Grid resolution of the mesh used for the geometry error.
    pub mesh_resolution: usize,
    pub masked: bool,
    pub verbose: bool,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            seeds: vec![0, 1, 2],
            variants: AblationVariant::ALL.to_vec(),
            eval_sampling: SamplingConfig::evaluation(),
            mesh_resolution: 48,
            masked: false,
            verbose: false,
        }
    }
}

/// Scores of one variant trained from one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: AblationVariant,
    pub seed: u64,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean |analytic SDF| at extracted mesh vertices, averaged over held-out expressions.
    pub geometry_error: f64,
    pub final_loss: f64,
}

/// Per-variant medians over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub label: String,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub geometry_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    pub fn row(&self, variant: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Markdown table with one row per variant and L1 / PSNR / SSIM columns.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Method | L1 ↓ | PSNR ↑ | SSIM ↑ |\n|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(s, "| {} | {:.4} | {:.3} | {:.3} |", r.label, r.mae, r.psnr, r.ssim);
        }
        s
    }

    /// The geometry error column, kept apart from the image-metric table.
    pub fn geometry_markdown(&self) -> String {
        let mut s = String::from("| Method | mesh mean abs SDF ↓ |\n|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(s, "| {} | {:.5} |", r.label, r.geometry_error);
        }
        s
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Mean mesh-vs-oracle error over the held-out expressions.
fn heldout_geometry_error(params: &crate::fields::FieldParams<f32>, scene: &SceneDefinition, dataset: &Dataset, resolution: usize) -> Result<f64> {
    let frames = dataset.split(Split::Heldout);
    if frames.is_empty() {
        return Err(Error::TrainConfig("the dataset has no held-out frames".into()));
    }
    let mut total = 0.0;
    for f in &frames {
        total += geometry_error(params, scene, &f.expression, resolution)?.mean_abs_sdf;
    }
    Ok(total / frames.len() as f64)
}

/// Trains every requested variant from every seed and tabulates the
/// held-out medians. `base_config.seed` is overridden per run.
pub fn run_ablation_suite(dataset: &Dataset, base_config: &TrainConfig, settings: &AblationSettings) -> Result<AblationTable> {
    let scene = &dataset.manifest.scene;
    let opts = EvalOptions { sampling: settings.eval_sampling.clone(), masked: settings.masked };
    let mut runs = Vec::new();
    for &variant in &settings.variants {
        for &seed in &settings.seeds {
            let config = TrainConfig { seed, ..variant.configure(base_config) };
            let mut trainer = Trainer::new(dataset, config)?;
            let history = trainer.run(None, None)?;
            let report = evaluate(&trainer.params, dataset, Split::Heldout, &opts)?;
            // A field without a zero crossing scores as the scene's full extent.
            let geometry = match heldout_geometry_error(&trainer.params, scene, dataset, settings.mesh_resolution) {
                Err(Error::Mesh(_)) => scene.bound_radius(),
                other => other?,
            };
            let run = AblationRun {
                variant,
                seed,
                mae: report.mae,
                psnr: report.psnr,
                ssim: report.ssim,
                geometry_error: geometry,
                final_loss: history.last().map_or(f64::NAN, |l| l.total),
            };
            if settings.verbose {
                eprintln!(
                    "[ablate] {:<20} seed {seed}: L1 {:.4} PSNR {:.3} SSIM {:.4} geom {:.5}",
                    variant.label(),
                    run.mae,
                    run.psnr,
                    run.ssim,
                    run.geometry_error
                );
            }
            runs.push(run);
        }
    }
    let rows = settings
        .variants
        .iter()
        .map(|&variant| {
            let of = |f: fn(&AblationRun) -> f64| median(&runs.iter().filter(|r| r.variant == variant).map(f).collect::<Vec<_>>());
            AblationRow {
                variant,
                label: variant.label().to_string(),
                mae: of(|r| r.mae),
                psnr: of(|r| r.psnr),
                ssim: of(|r| r.ssim),
                geometry_error: of(|r| r.geometry_error),
            }
        })
        .collect();
    Ok(AblationTable { seeds: settings.seeds.clone(), rows, runs })
}
