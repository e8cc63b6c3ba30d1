//! Loss terms: FOA data fidelity, momentum / continuity / wave residual
//! priors, the adaptive total loss, and Latin hypercube collocation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::TargetRegion;
use crate::siren::{Coord, FieldEval, FieldEvalGrad, AXES, OUTPUTS};

/// Which physics prior enters the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Data fidelity only.
    None,
    /// Wave-equation residual on the W channel.
    Wave,
    /// Momentum and continuity residuals coupling all four channels.
    Foa,
}

impl PriorMode {
    pub const ALL: [PriorMode; 3] = [PriorMode::None, PriorMode::Wave, PriorMode::Foa];

    pub fn name(self) -> &'static str {
        match self {
            PriorMode::None => "none",
            PriorMode::Wave => "wave",
            PriorMode::Foa => "foa",
        }
    }
}

impl std::str::FromStr for PriorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PriorMode::None),
            "wave" => Ok(PriorMode::Wave),
            "foa" => Ok(PriorMode::Foa),
            other => Err(Error::Validation(format!(
                "unknown method {other:?} (expected none, wave or foa)"
            ))),
        }
    }
}

impl std::fmt::Display for PriorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Collocation points drawn from the region and `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationBatch {
    pub coords: Vec<Coord>,
}

/// Every term of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub momentum: f64,
    pub continuity: f64,
    pub wave: f64,
    pub total: f64,
    pub eps_data: f64,
    pub eps_prior: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.data,
            self.momentum,
            self.continuity,
            self.wave,
            self.total,
            self.eps_data,
            self.eps_prior,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Pairwise (cascade) summation; the result depends only on the input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// `grad(w) - (1/c0) dv/dt`, one entry per Cartesian axis.
pub fn momentum_residual(eval: &FieldEval, c0: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| eval.jac[0][i] - eval.jac[1 + i][3] / c0)
}

/// `div(v) - (1/c0) dw/dt`.
pub fn continuity_residual(eval: &FieldEval, c0: f64) -> f64 {
    eval.jac[1][0] + eval.jac[2][1] + eval.jac[3][2] - eval.jac[0][3] / c0
}

/// `laplacian(w) - (1/c0^2) d2w/dt2`; needs the second derivatives of `w`.
pub fn wave_residual(eval: &FieldEval, c0: f64) -> Result<f64> {
    let s = eval
        .second
        .ok_or_else(|| Error::State("wave residual needs second derivatives of w".into()))?;
    Ok(s[0] + s[1] + s[2] - s[3] / (c0 * c0))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Prior penalties at a single point with the adjoint of their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointPrior {
    /// L1 norm of the momentum residual.
    pub momentum: f64,
    /// Absolute continuity residual.
    pub continuity: f64,
    /// Absolute wave residual.
    pub wave: f64,
    /// Subgradient of the active penalties with respect to the field evaluation.
    pub grad: FieldEvalGrad,
}

pub fn point_prior(eval: &FieldEval, mode: PriorMode, c0: f64) -> Result<PointPrior> {
    let mut out = PointPrior::default();
    match mode {
        PriorMode::None => {}
        PriorMode::Foa => {
            let m = momentum_residual(eval, c0);
            out.momentum = m.iter().map(|v| v.abs()).sum();
            for i in 0..3 {
                let s = sign(m[i]);
                out.grad.jac[0][i] += s;
                out.grad.jac[1 + i][3] -= s / c0;
            }
            let c = continuity_residual(eval, c0);
            out.continuity = c.abs();
            let s = sign(c);
            for i in 0..3 {
                out.grad.jac[1 + i][i] += s;
            }
            out.grad.jac[0][3] -= s / c0;
        }
        PriorMode::Wave => {
            let r = wave_residual(eval, c0)?;
            out.wave = r.abs();
            let s = sign(r);
            out.grad.second = [s, s, s, -s / (c0 * c0)];
        }
    }
    Ok(out)
}

/// Mean prior penalties over evaluated collocation points.
///
/// Returns `(momentum, continuity, wave)`; inactive terms are zero.
pub fn prior_loss(evals: &[FieldEval], mode: PriorMode, c0: f64) -> Result<(f64, f64, f64)> {
    ensure!(!evals.is_empty(), "empty collocation batch");
    let points = evals
        .iter()
        .map(|e| point_prior(e, mode, c0))
        .collect::<Result<Vec<_>>>()?;
    let n = evals.len() as f64;
    let mean =
        |f: fn(&PointPrior) -> f64| pairwise_sum(&points.iter().map(f).collect::<Vec<_>>()) / n;
    Ok((
        mean(|p| p.momentum),
        mean(|p| p.continuity),
        mean(|p| p.wave),
    ))
}

/// Mean over samples of `|w_hat - w| + ||v_hat - v||_1`; rows are (w, x, y, z).
pub fn data_loss(predictions: &[[f64; OUTPUTS]], measurements: &[[f64; OUTPUTS]]) -> Result<f64> {
    ensure!(!predictions.is_empty(), "empty data batch");
    ensure!(
        predictions.len() == measurements.len(),
        "{} predictions for {} measurements",
        predictions.len(),
        measurements.len()
    );
    let per_sample: Vec<f64> = predictions
        .iter()
        .zip(measurements)
        .map(|(p, m)| p.iter().zip(m).map(|(a, b)| (a - b).abs()).sum())
        .collect();
    Ok(pairwise_sum(&per_sample) / predictions.len() as f64)
}

/// Adaptive weighting of data and prior terms by learnable `eps` values.
pub fn total_loss(
    data: f64,
    momentum: f64,
    continuity: f64,
    eps_data: f64,
    eps_prior: f64,
) -> Result<f64> {
    ensure!(
        eps_data > 0.0 && eps_prior > 0.0,
        "loss weights must be positive (got {eps_data}, {eps_prior})"
    );
    Ok(data / (2.0 * eps_data * eps_data)
        + (momentum + continuity) / (2.0 * eps_prior * eps_prior)
        + (eps_data * eps_prior).ln())
}

/// Derivatives of [`total_loss`] with respect to `ln(eps_data)` and `ln(eps_prior)`.
pub fn total_loss_log_eps_grad(data: f64, prior: f64, eps_data: f64, eps_prior: f64) -> (f64, f64) {
    (
        1.0 - data / (eps_data * eps_data),
        1.0 - prior / (eps_prior * eps_prior),
    )
}

/// Latin hypercube sample over `region x [0, T]`: along each axis the `n`
/// points occupy the `n` equal strata exactly once.
pub fn lhs_sample(n: usize, region: &TargetRegion, seed: u64) -> Result<CollocationBatch> {
    ensure!(n >= 1, "collocation batch must hold at least one point");
    region.validate()?;
    let bounds = region.space_time_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(AXES);
    for &(lo, hi) in &bounds {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        axes.push(
            strata
                .into_iter()
                .map(|s| {
                    let u: f64 = rng.random();
                    (lo + (s as f64 + u) / n as f64 * (hi - lo)).min(hi)
                })
                .collect(),
        );
    }
    let coords = (0..n)
        .map(|i| Coord::from_array([axes[0][i], axes[1][i], axes[2][i], axes[3][i]]))
        .collect();
    Ok(CollocationBatch { coords })
}
