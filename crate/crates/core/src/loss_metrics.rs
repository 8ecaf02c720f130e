//! Training objective and evaluation metrics: per-domain losses, the
//! uncertainty-balanced total loss with learnable log-variances, the
//! fixed-weight baseline, and the relative l2 error reported in percent.

use thiserror::Error;

use crate::autodiff::{AdError, Tape, Tensor, Var};
use crate::hetgraph::NodeKind;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("ground truth has zero norm in every sample")]
    ZeroNorm,
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Mean squared errors over the two node populations, each averaged by its
/// own node count. Held as tape nodes so the total loss stays differentiable.
#[derive(Debug, Clone, Copy)]
pub struct DomainLosses {
    pub l_fluid: Var,
    pub l_solid: Var,
}

/// Per-kind boolean row masks: (fluid, solid). The two are complements.
pub fn kind_masks(node_kinds: &[NodeKind]) -> (Vec<bool>, Vec<bool>) {
    let fluid: Vec<bool> = node_kinds.iter().map(|&k| k == NodeKind::Fluid).collect();
    let solid = fluid.iter().map(|&f| !f).collect();
    (fluid, solid)
}

/// Masked MSE per domain between predicted and target per-node deltas.
pub fn domain_losses<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: Var,
    node_kinds: &[NodeKind],
) -> Result<DomainLosses, MetricsError> {
    let (fluid_mask, solid_mask) = kind_masks(node_kinds);
    let l_fluid = tape.mse_reduce(pred, target, Some(&fluid_mask))?;
    let l_solid = tape.mse_reduce(pred, target, Some(&solid_mask))?;
    Ok(DomainLosses { l_fluid, l_solid })
}

/// Uncertainty-balanced total loss with log-variance parameters s_d:
/// (1/2) e^{-s_f} L_f + (1/2) e^{-s_s} L_s + s_f/2 + s_s/2.
///
/// Minimizing over s_d alone drives e^{s_d} toward L_d, so each domain is
/// effectively normalized by its own learned variance.
pub fn igbl<T: Scalar>(
    tape: &mut Tape<T>,
    losses: DomainLosses,
    s_f: Var,
    s_s: Var,
) -> Result<Var, MetricsError> {
    let half = T::from_f64(0.5);
    let mut total = weighted_term(tape, losses.l_fluid, s_f)?;
    let solid = weighted_term(tape, losses.l_solid, s_s)?;
    total = tape.add(total, solid)?;
    let reg_f = tape.scale(s_f, half)?;
    let reg_s = tape.scale(s_s, half)?;
    total = tape.add(total, reg_f)?;
    total = tape.add(total, reg_s)?;
    if !tape.value(total).all_finite() {
        return Err(MetricsError::NonFinite("igbl"));
    }
    Ok(total)
}

/// (1/2) e^{-s} L, the precision-weighted half of one domain's term.
fn weighted_term<T: Scalar>(tape: &mut Tape<T>, loss: Var, s: Var) -> Result<Var, AdError> {
    let neg_s = tape.scale(s, -T::one())?;
    let precision = tape.exp(neg_s)?;
    let weighted = tape.mul(precision, loss)?;
    tape.scale(weighted, T::from_f64(0.5))
}

/// Fixed-weight baseline: w_f L_f + w_s L_s. Used by the manual sweep the
/// learned weighting is compared against.
pub fn fixed_weight_loss<T: Scalar>(
    tape: &mut Tape<T>,
    losses: DomainLosses,
    w_f: T,
    w_s: T,
) -> Result<Var, MetricsError> {
    let f = tape.scale(losses.l_fluid, w_f)?;
    let s = tape.scale(losses.l_solid, w_s)?;
    Ok(tape.add(f, s)?)
}

/// Outcome of a relative-l2 evaluation over a batch of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelL2 {
    /// Mean of per-sample ||pred - truth|| / ||truth||, times 100.
    pub percent: f64,
    /// Samples skipped because the ground truth had zero norm.
    pub skipped: usize,
}

/// Mean relative l2 error in percent over samples, restricted to masked
/// rows. Samples whose masked ground truth is exactly zero are skipped and
/// counted rather than poisoning the mean.
pub fn relative_l2<T: Scalar>(
    preds: &[Tensor<T>],
    truths: &[Tensor<T>],
    row_mask: Option<&[bool]>,
) -> Result<RelL2, MetricsError> {
    assert_eq!(preds.len(), truths.len(), "sample count mismatch");
    let mut total = 0.0f64;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (pred, truth) in preds.iter().zip(truths) {
        assert_eq!(
            (pred.rows(), pred.cols()),
            (truth.rows(), truth.cols()),
            "sample shape mismatch"
        );
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for r in 0..pred.rows() {
            if row_mask.is_some_and(|m| !m[r]) {
                continue;
            }
            for c in 0..pred.cols() {
                let d = pred.get(r, c).to_f64() - truth.get(r, c).to_f64();
                num += d * d;
                den += truth.get(r, c).to_f64().powi(2);
            }
        }
        if den == 0.0 {
            skipped += 1;
            continue;
        }
        let ratio = (num / den).sqrt();
        if !ratio.is_finite() {
            return Err(MetricsError::NonFinite("relative_l2"));
        }
        total += ratio;
        used += 1;
    }
    if used == 0 {
        return Err(MetricsError::ZeroNorm);
    }
    Ok(RelL2 {
        percent: 100.0 * total / used as f64,
        skipped,
    })
}

/// One per-epoch metrics record; serialized as a CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub l_fluid: f64,
    pub l_solid: f64,
    pub sigma2_f: f64,
    pub sigma2_s: f64,
    pub rel_l2_fluid: f64,
    pub rel_l2_solid: f64,
    pub rel_l2_combined: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "epoch,split,l_fluid,l_solid,sigma2_f,sigma2_s,rel_l2_fluid,rel_l2_solid,rel_l2_combined";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.split,
            self.l_fluid,
            self.l_solid,
            self.sigma2_f,
            self.sigma2_s,
            self.rel_l2_fluid,
            self.rel_l2_solid,
            self.rel_l2_combined
        )
    }
}
