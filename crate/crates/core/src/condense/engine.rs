use std::time::Instant;

use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;

use crate::augment::{assemble, decode_batch, formation, sample_aug, AugmentationParams, FormationConfig};
use crate::condense::config::CondenseConfig;
use crate::condense::loss::{class_term, real_mean};
use crate::condense::trace::{CondenseTrace, TraceRecord};
use crate::data::{sample_class_rows, LabeledDataset, NormStats, Provenance, SyntheticSet};
use crate::error::{ensure, Error, Result};
use crate::model::{perturb, ArchSpec, HashNetParams, PerturbationConfig};
use crate::seed::{self, stream};
use crate::Images;

/// What the engine did for one class in one iteration.
pub struct ClassStep<'a> {
    pub iteration: usize,
    pub class_id: usize,
    pub real_aug: &'a AugmentationParams,
    pub syn_aug: &'a AugmentationParams,
    pub theta_init: &'a HashNetParams,
    pub theta_aug: &'a HashNetParams,
    /// Images fed to the extractor on the synthetic side.
    pub syn_images: usize,
    pub syn_canvases: usize,
}

/// Hooks into the iteration loop (instrumentation and checkpointing).
pub trait Observer {
    fn on_class_step(&mut self, _step: &ClassStep<'_>) {}

    /// Called after each update with the current canvases.
    fn on_iteration(&mut self, _record: &TraceRecord, _canvases: &Images) {}

    /// Polled after each iteration; `true` ends the run early.
    fn should_stop(&self) -> bool {
        false
    }
}

impl Observer for () {}

/// Clamp to the valid pixel range and round to `f32`.
pub fn export_pixels(mut x: Images, stats: &NormStats) -> Images {
    stats.clamp_to_valid(&mut x);
    x.mapv_inplace(|v| v as f32 as f64);
    x
}

fn initial_canvases(ds: &LabeledDataset, cfg: &CondenseConfig, form: &FormationConfig) -> Result<Images> {
    let (c, l) = (ds.channels(), ds.image_side());
    let k = form.patch_count();
    let mut out = Array4::zeros((ds.num_classes * cfg.ipc, c, l, l));
    for class_id in 0..ds.num_classes {
        let pop = &ds.class_index[class_id];
        ensure!(!pop.is_empty(), Validation, "class {class_id} has no images");
        let mut order = pop.clone();
        order.shuffle(&mut seed::rng(cfg.seed, &[stream::SYN_INIT, class_id as u64]));
        for j in 0..cfg.ipc {
            let rows: Vec<usize> = (0..k).map(|p| order[(j * k + p) % order.len()]).collect();
            let canvas: Array3<f64> = if k == 1 {
                ds.images.index_axis(Axis(0), rows[0]).to_owned()
            } else {
                assemble(&ds.gather(&rows), form)?
            };
            out.index_axis_mut(Axis(0), class_id * cfg.ipc + j).assign(&canvas);
        }
    }
    Ok(export_pixels(out, &ds.norm_stats))
}

/// Runs feature-embedding matching and returns the condensed set and trace.
pub fn condense(ds: &LabeledDataset, cfg: &CondenseConfig) -> Result<(SyntheticSet, CondenseTrace)> {
    condense_observed(ds, cfg, &mut ())
}

/// Plain distribution matching: no perturbation, no multi-formation.
pub fn condense_dm_baseline(ds: &LabeledDataset, cfg: &CondenseConfig) -> Result<(SyntheticSet, CondenseTrace)> {
    let cfg = CondenseConfig {
        enable_na: false,
        enable_da: false,
        ..cfg.clone()
    };
    condense(ds, &cfg)
}

pub fn condense_observed(
    ds: &LabeledDataset,
    cfg: &CondenseConfig,
    observer: &mut dyn Observer,
) -> Result<(SyntheticSet, CondenseTrace)> {
    cfg.validate()?;
    let l = ds.image_side();
    let form = cfg.formation(l)?;
    let arch = ArchSpec::resolve(&cfg.arch, ds.channels(), l)?;
    let ipc = cfg.ipc;
    let mut canvases = initial_canvases(ds, cfg, &form)?;
    let mut velocity = Array4::<f64>::zeros(canvases.raw_dim());
    let mut trace = CondenseTrace::default();
    let start = Instant::now();
    let alpha = cfg.effective_alpha();

    'outer: for rep in 0..cfg.outer_repeats {
        let theta_init = HashNetParams::init(
            &arch,
            cfg.code_bits,
            seed::derive(cfg.seed, &[stream::INIT_NET, rep as u64]),
        )?;
        for r in 0..cfg.iterations {
            let it = rep * cfg.iterations + r;
            let theta_aug = if alpha > 0.0 {
                perturb(
                    &theta_init,
                    &PerturbationConfig {
                        alpha,
                        noise_seed: seed::derive(cfg.seed, &[stream::PERTURB, it as u64]),
                        ..cfg.perturb.clone()
                    },
                )?
            } else {
                theta_init.clone()
            };

            let mut grad = Array4::<f64>::zeros(canvases.raw_dim());
            let mut loss = 0.0;
            for class_id in 0..ds.num_classes {
                let tags = [it as u64, class_id as u64];
                let batch = cfg.real_batch.min(ds.class_population(class_id));
                let rows = sample_class_rows(
                    ds,
                    class_id,
                    batch,
                    &mut seed::rng(cfg.seed, &[stream::REAL_BATCH, tags[0], tags[1]]),
                )?;
                let real = ds.gather(&rows);

                let syn_rows: Vec<usize> = match cfg.syn_batch {
                    Some(b) if b < ipc => {
                        let mut rng = seed::rng(cfg.seed, &[stream::REAL_BATCH, tags[0], tags[1], 1]);
                        let mut picked = rand::seq::index::sample(&mut rng, ipc, b).into_vec();
                        picked.sort_unstable();
                        picked.into_iter().map(|j| class_id * ipc + j).collect()
                    }
                    _ => (class_id * ipc..(class_id + 1) * ipc).collect(),
                };
                let syn_canvases = crate::data::gather_rows(&canvases, &syn_rows);
                let syn = decode_batch(&syn_canvases, &form)?;

                let w = sample_aug(
                    &cfg.aug_policy,
                    l,
                    &mut seed::rng(cfg.seed, &[stream::AUGMENT, tags[0], tags[1]]),
                )?;
                observer.on_class_step(&ClassStep {
                    iteration: it,
                    class_id,
                    real_aug: &w,
                    syn_aug: &w,
                    theta_init: &theta_init,
                    theta_aug: &theta_aug,
                    syn_images: syn.dim().0,
                    syn_canvases: syn_rows.len(),
                });

                let mu_real = real_mean(&theta_aug, &real, &w)?;
                let (term, g_syn) = class_term(&theta_aug, &mu_real, &syn, &w)?;
                let g_canvas = formation::decode_batch_backward(&g_syn, &form);
                for (k, &row) in syn_rows.iter().enumerate() {
                    grad.index_axis_mut(Axis(0), row)
                        .assign(&g_canvas.index_axis(Axis(0), k));
                }
                loss += term;
            }

            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !loss.is_finite() || !grad_norm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "matching loss {loss} / gradient norm {grad_norm} at iteration {it}"
                )));
            }
            velocity.zip_mut_with(&grad, |v, &g| *v = cfg.momentum * *v + g);
            canvases.zip_mut_with(&velocity, |x, &v| *x -= cfg.lr_syn * v);

            let record = TraceRecord {
                iteration: it,
                loss,
                seconds: start.elapsed().as_secs_f64(),
                grad_norm,
            };
            tracing::debug!(iteration = it, loss, grad_norm, "matching step");
            observer.on_iteration(&record, &canvases);
            trace.records.push(record);
            if observer.should_stop() {
                break 'outer;
            }
        }
    }

    let pixels = export_pixels(canvases, &ds.norm_stats);
    let mut prov = Provenance::new(
        cfg.method_label(),
        cfg.seed,
        cfg.hash(),
        ds.num_classes * ipc,
        ds.len(),
    );
    prov.iterations_completed = trace.records.len();
    let set = SyntheticSet::new(
        pixels,
        ds.num_classes,
        ipc,
        form.factor,
        ds.norm_stats.clone(),
        prov,
    )?;
    Ok((set, trace))
}

/// The canvases a finished run would start from; exposed for tests and
/// checkpoint comparisons.
pub fn initial_set(ds: &LabeledDataset, cfg: &CondenseConfig) -> Result<Images> {
    let form = cfg.formation(ds.image_side())?;
    initial_canvases(ds, cfg, &form)
}

/// Wraps checkpointed canvases as a set with the run's metadata.
pub fn snapshot_set(
    ds: &LabeledDataset,
    cfg: &CondenseConfig,
    canvases: &Images,
    iterations_completed: usize,
) -> Result<SyntheticSet> {
    let mut prov = Provenance::new(cfg.method_label(), cfg.seed, cfg.hash(), canvases.dim().0, ds.len());
    prov.iterations_completed = iterations_completed;
    SyntheticSet::new(
        export_pixels(canvases.clone(), &ds.norm_stats),
        ds.num_classes,
        cfg.ipc,
        cfg.effective_factor(),
        ds.norm_stats.clone(),
        prov,
    )
}

