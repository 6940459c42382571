//! Saliency MSE, the appearance loss and their sum.

use serde::{Deserialize, Serialize};
use usersod_core::{BinaryMask, ImageTensor, Need, SaliencyMap};
use usersod_tensor::{Graph, Real, Tensor, Var};

use crate::config::KlDirection;
use crate::error::{ModelError, Result};
use crate::model::{mask_tensor, Forward, UserSal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mse: f64,
    /// One term per level carrying the appearance loss (zeros when it is disabled).
    pub al_per_level: Vec<f64>,
    pub total: f64,
}

pub fn mse_loss(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(ModelError::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p as f64 - g as f64).powi(2))
        .sum();
    Ok(s / gt.data().len() as f64)
}

/// Mean over channels of the KL divergence between per-channel spatial softmaxes,
/// `KL(softmax(target) || softmax(pred))`.
pub fn appearance_loss_level<T: Real>(target: &Tensor<T>, pred: &Tensor<T>) -> Result<f64> {
    appearance_loss_level_dir(target, pred, KlDirection::TargetToFeatures)
}

pub fn appearance_loss_level_dir<T: Real>(target: &Tensor<T>, pred: &Tensor<T>, dir: KlDirection) -> Result<f64> {
    if target.shape() != pred.shape() || target.shape().len() != 3 {
        return Err(ModelError::Shape(format!(
            "appearance target {:?} vs features {:?}",
            target.shape(),
            pred.shape()
        )));
    }
    let mut g = Graph::<T>::inference();
    let p = g.constant(pred.clone());
    let kl = kl(&mut g, dir, target, p);
    Ok(g.value(kl).item().f64())
}

fn kl<T: Real>(g: &mut Graph<T>, dir: KlDirection, target: &Tensor<T>, features: Var) -> Var {
    match dir {
        KlDirection::TargetToFeatures => g.spatial_kl(target, features),
        KlDirection::FeaturesToTarget => g.spatial_kl_reverse(target, features),
    }
}

/// Graph nodes of the training objective.
pub struct LossTerms {
    pub total: Var,
    pub mse: Var,
    pub al: Vec<Var>,
}

impl LossTerms {
    pub fn report<T: Real>(&self, g: &Graph<T>, levels: usize) -> LossReport {
        let mut al_per_level: Vec<f64> = self.al.iter().map(|&v| g.value(v).item().f64()).collect();
        if al_per_level.is_empty() {
            al_per_level = vec![0.0; levels];
        }
        LossReport {
            mse: g.value(self.mse).item().f64(),
            al_per_level,
            total: g.value(self.total).item().f64(),
        }
    }
}

/// Sum of the appearance loss on every active level and the saliency MSE.
///
/// The appearance loss is only present in the similarity mode with the loss enabled.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    model: &UserSal<T>,
    image: &ImageTensor,
    need: &Need,
    gt: &BinaryMask,
) -> Result<(LossTerms, Forward)> {
    let fwd = model.forward(g, image, need)?;
    let target = mask_tensor::<T>(gt);
    if g.shape(fwd.saliency) != target.shape() {
        return Err(ModelError::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            g.shape(fwd.saliency),
            target.shape()
        )));
    }
    let mse = g.mse(fwd.saliency, &target);
    let mut al = Vec::new();
    let mut total = mse;
    if model.config().uses_appearance_loss() {
        let targets = model.appearance_target(image, gt)?;
        for l in model.config().active_levels() {
            let term = kl(g, model.config().appearance_kl, &targets[l], fwd.features[l]);
            al.push(term);
            total = g.add(total, term);
        }
    }
    Ok((LossTerms { total, mse, al }, fwd))
}
