use serde::{Deserialize, Serialize};

use super::config::PretrainConfig;
use crate::data::{SceneSpec, SequenceGenerator, StereoFrame};
use crate::error::{Error, Result};
use crate::loss;
use crate::network::{Network, NetworkConfig, PyramidGrad};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor4;

/// Seed offset separating held-out frames from training frames.
const HOLDOUT_SALT: u64 = 0x0068_6f6c_646f_7574;

/// One row of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Mean multi-scale loss since the previous row.
    pub loss: f64,
    /// Mean full-resolution EPE on the training frames since the previous row.
    pub train_epe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub heldout_epe: Option<f64>,
    pub heldout_d1: Option<f64>,
}

fn stack(frames: &[StereoFrame<f32>], pick: impl Fn(&StereoFrame<f32>) -> &Tensor4<f32>) -> Result<Tensor4<f32>> {
    let parts: Vec<&Tensor4<f32>> = frames.iter().map(pick).collect();
    Tensor4::concat_batch(&parts)
}

fn ground_truth(f: &StereoFrame<f32>) -> Result<&Tensor4<f32>> {
    f.gt_disparity
        .as_ref()
        .ok_or_else(|| Error::Config("pretraining frames need ground truth".into()))
}

/// Multi-scale supervised L1 step on one batch; returns (loss, full-res EPE).
fn train_step(net: &mut Network<f32>, opt: &mut Adam<f32>, batch: &[StereoFrame<f32>], decay: f64) -> Result<(f64, f64)> {
    let left = stack(batch, |f| &f.left)?;
    let right = stack(batch, |f| &f.right)?;
    let gts: Vec<&Tensor4<f32>> = batch.iter().map(ground_truth).collect::<Result<_>>()?;
    let gt = Tensor4::concat_batch(&gts)?;
    let ones = Tensor4::full(gt.shape(), 1.0);
    let mask = concat_masks(batch, &ones)?;

    let (pyr, trace) = net.forward_traced(&left, &right)?;
    let (l_full, g_full) = loss::supervised_l1(&pyr.full, &gt, &mask)?;
    let mut total = f64::from(l_full);
    let mut grads = PyramidGrad::full(g_full);
    for (&level, y) in &pyr.scaled {
        let w = decay.powi(level as i32 - 1) as f32;
        let up = loss::upscale_disparity(y, level)?;
        let (l, g) = loss::supervised_l1(&up, &gt, &mask)?;
        total += f64::from(w * l);
        let mut g = loss::upscale_backward(y.shape(), level, g)?;
        g.scale_inplace(w);
        grads.scaled.insert(level, g);
    }
    if !total.is_finite() {
        return Err(Error::Numerical(format!("pretraining loss diverged ({total})")));
    }
    net.backward_full(&trace, grads)?;
    let scope = net.scope_all();
    opt.step(net, &scope)?;
    if !net.parameters().all(|p| p.value.all_finite()) {
        return Err(Error::Numerical("non-finite parameters after update".into()));
    }
    let epe = crate::data::epe(&pyr.full, &gt, &mask)?.unwrap_or(0.0);
    Ok((total, epe))
}

fn concat_masks(batch: &[StereoFrame<f32>], ones: &Tensor4<f32>) -> Result<Tensor4<f32>> {
    let per_item = ones.slice_batch(0, 1)?;
    let parts: Vec<&Tensor4<f32>> = batch.iter().map(|f| f.valid_mask.as_ref().unwrap_or(&per_item)).collect();
    Tensor4::concat_batch(&parts)
}

/// Mean EPE and D1-all of `net` over `frames` without adaptation.
pub fn evaluate<'a>(net: &Network<f32>, frames: impl IntoIterator<Item = &'a StereoFrame<f32>>) -> Result<(Option<f64>, Option<f64>)> {
    let (mut epe, mut d1, mut n) = (0.0, 0.0, 0usize);
    for f in frames {
        let pyr = net.forward(&f.left, &f.right)?;
        if let Some(m) = f.metrics(&pyr.full)? {
            epe += m.epe;
            d1 += m.d1;
            n += 1;
        }
    }
    Ok(if n == 0 {
        (None, None)
    } else {
        (Some(epe / n as f64), Some(d1 / n as f64))
    })
}

/// Held-out frames for a pretraining run.
pub fn heldout_frames(spec: &SceneSpec, seed: u64, count: usize) -> Result<Vec<StereoFrame<f32>>> {
    let mut g = SequenceGenerator::new(spec.clone(), seed ^ HOLDOUT_SALT)?;
    (0..count).map(|_| g.next_frame()).collect()
}

/// Supervised pretraining on generated frames with ground truth. `on_point`
/// receives a curve row every `log_every` iterations.
pub fn pretrain(
    net_config: &NetworkConfig,
    cfg: &PretrainConfig,
    spec: &SceneSpec,
    seed: u64,
    mut on_point: impl FnMut(&CurvePoint) -> Result<()>,
) -> Result<(Network<f32>, PretrainSummary)> {
    let mut net = Network::<f32>::build(net_config.clone(), seed)?;
    net_config.check_input(spec.height, spec.width)?;
    if cfg.batch == 0 {
        return Err(Error::Config("batch must be >= 1".into()));
    }
    let mut opt = Adam::new(&net, AdamConfig::with_learning_rate(cfg.learning_rate))?;
    let mut gen = SequenceGenerator::new(spec.clone(), seed)?;
    let log_every = cfg.log_every.max(1);
    let (mut acc_loss, mut acc_epe, mut acc_n) = (0.0, 0.0, 0usize);
    let mut last_loss = None;
    for it in 1..=cfg.iterations {
        let batch: Vec<StereoFrame<f32>> = (0..cfg.batch).map(|_| gen.next_frame()).collect::<Result<_>>()?;
        let (l, e) = train_step(&mut net, &mut opt, &batch, cfg.level_decay)?;
        acc_loss += l;
        acc_epe += e;
        acc_n += 1;
        last_loss = Some(l);
        if it % log_every == 0 || it == cfg.iterations {
            on_point(&CurvePoint {
                iteration: it,
                loss: acc_loss / acc_n as f64,
                train_epe: acc_epe / acc_n as f64,
            })?;
            (acc_loss, acc_epe, acc_n) = (0.0, 0.0, 0);
        }
    }
    let held = heldout_frames(spec, seed, cfg.eval_frames)?;
    let (heldout_epe, heldout_d1) = evaluate(&net, &held)?;
    Ok((
        net,
        PretrainSummary {
            iterations: cfg.iterations,
            final_loss: last_loss,
            heldout_epe,
            heldout_d1,
        },
    ))
}
