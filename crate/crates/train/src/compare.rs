//! Trains and evaluates several variants on the same data.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use waydcm_core::{PipelineConfig, PreparedScene, Scaler, Variant, NUM_FEATURES};
use waydcm_nn::{Model, ModelConfig};

use crate::data::build_inputs;
use crate::error::Result;
use crate::evaluate::{evaluate, EvalMetrics};
use crate::trainer::{train, TrainConfig, TrainOutcome};

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: Variant,
    pub metrics: EvalMetrics,
    pub outcome: TrainOutcome,
    /// Wall-clock seconds for training and evaluation; not part of the metrics CSV.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct CompareResult {
    pub seed: u64,
    pub variants: Vec<VariantResult>,
}

pub const METRICS_HEADER: &str = "variant,seed,scenes,min_ade_1,min_fde_1,min_ade_6,min_fde_6,goal_accuracy,goal_nll,best_epoch,beta_dir,beta_occ,beta_coll,beta_dangle,beta_ddist";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeEntry {
    pub variant: Variant,
    pub seconds: f64,
}

impl CompareResult {
    pub fn get(&self, variant: Variant) -> Option<&VariantResult> {
        self.variants.iter().find(|r| r.variant == variant)
    }

    pub fn write_metrics_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{METRICS_HEADER}")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.variants {
            let m = &r.metrics;
            // Columns outside the variant's feature set, and all of them for the
            // baseline, stay empty.
            let beta = r.outcome.model.beta().to_array();
            let betas: Vec<String> = match r.variant.feature_set() {
                Some(set) => (0..NUM_FEATURES).map(|c| if set.0[c] { beta[c].to_string() } else { String::new() }).collect(),
                None => vec![String::new(); NUM_FEATURES],
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.variant,
                self.seed,
                m.scenes,
                m.min_ade_1,
                m.min_fde_1,
                m.min_ade_6,
                m.min_fde_6,
                opt(m.goal_accuracy),
                opt(m.goal_nll),
                r.outcome.best_epoch,
                betas.join(",")
            )?;
        }
        Ok(())
    }

    pub fn runtimes(&self) -> Vec<RuntimeEntry> {
        self.variants
            .iter()
            .map(|r| RuntimeEntry {
                variant: r.variant,
                seconds: r.seconds,
            })
            .collect()
    }
}

/// Trains each variant from `model_seed` on `train_scenes` and evaluates it on
/// `test_scenes`.
#[allow(clippy::too_many_arguments)]
pub fn compare_variants(
    variants: &[Variant],
    train_scenes: &[PreparedScene],
    test_scenes: &[PreparedScene],
    scaler: &Scaler,
    pipeline: &PipelineConfig,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    model_seed: u64,
) -> Result<CompareResult> {
    let k = pipeline.num_alternatives();
    let mut out = Vec::with_capacity(variants.len());
    for &variant in variants {
        let start = Instant::now();
        let train_inputs = build_inputs(train_scenes, scaler, variant, pipeline, model_cfg);
        let test_inputs = build_inputs(test_scenes, scaler, variant, pipeline, model_cfg);
        let model = Model::new(variant, *model_cfg, k, pipeline.t_f, model_seed);
        let outcome = train(model, &train_inputs, train_cfg)?;
        let metrics = evaluate(&outcome.model, &test_inputs);
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{variant}: minFDE_6 {:.3} in {seconds:.1} s", metrics.min_fde_6);
        out.push(VariantResult {
            variant,
            metrics,
            outcome,
            seconds,
        });
    }
    Ok(CompareResult {
        seed: model_seed,
        variants: out,
    })
}
