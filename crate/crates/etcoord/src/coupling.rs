//! Edge potentials, their gradients, and the interval bound used by the
//! self-triggered scheduler.
//!
//! A coupling law attaches to an edge a nonnegative potential `P(z)`, its
//! gradient `psi(z) = ∇P(z)` (the coupling force exchanged by the edge's two
//! endpoints) and the Jacobian `∇psi(z)` whose induced norm drives the edge
//! clocks. Two laws are built in:
//!
//! * `arctan` — scalar `psi(z) = arctan(z)/π`, bounded force and globally
//!   bounded gradient, suitable for all three scheduling schemes;
//! * `quadratic` — `P(z) = ||z - offset||²/2` for formation offsets. Its
//!   force is unbounded and no global gradient bound is attached, so only
//!   the event-triggered scheme accepts it.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Compact set the edge variable is steered to.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSet {
    Origin,
    /// Singleton offset, used for formation scenarios.
    Point(Vec<f64>),
}

impl TargetSet {
    /// Distance from `x` to the set.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            TargetSet::Origin => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            TargetSet::Point(p) => x
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Jacobian of a built-in coupling gradient map. Both built-ins have highly
/// structured Jacobians, which keeps the induced-norm computation exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Jacobian {
    /// 1x1 Jacobian of a scalar law.
    Scalar(f64),
    /// `factor * I_dim`.
    ScaledIdentity { dim: usize, factor: f64 },
}

impl Jacobian {
    /// Induced Euclidean (spectral) norm.
    pub fn norm(&self) -> f64 {
        match *self {
            Jacobian::Scalar(d) => d.abs(),
            Jacobian::ScaledIdentity { factor, .. } => factor.abs(),
        }
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        match *self {
            Jacobian::Scalar(d) => {
                debug_assert!(row == 0 && col == 0);
                d
            }
            Jacobian::ScaledIdentity { factor, .. } => {
                if row == col {
                    factor
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LawKind {
    Arctan,
    Quadratic { offset: Vec<f64> },
}

/// Edge potential with gradient, Jacobian bound data and target set.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLaw {
    kind: LawKind,
    dim: usize,
}

impl CouplingLaw {
    /// Scalar arctan law: `psi(z) = arctan(z)/π`,
    /// `P(z) = (z·arctan(z) - ln(1+z²)/2)/π`.
    ///
    /// Carries the force bound `1/2` and the global gradient bound `1/π`.
    pub fn arctan() -> Self {
        Self {
            kind: LawKind::Arctan,
            dim: 1,
        }
    }

    /// Quadratic law `P(z) = ||z - offset||²/2` with `psi(z) = z - offset`.
    ///
    /// No force bound and no global gradient bound are attached, so the
    /// time- and self-triggered schedulers reject it at configuration time.
    pub fn quadratic(offset: Vec<f64>) -> Result<Self> {
        if offset.is_empty() {
            return Err(Error::InvalidParameter(
                "quadratic law needs a nonempty offset vector".into(),
            ));
        }
        let dim = offset.len();
        Ok(Self {
            kind: LawKind::Quadratic { offset },
            dim,
        })
    }

    /// Edge-variable dimension the law acts on.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn potential(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim);
        match &self.kind {
            LawKind::Arctan => {
                let x = z[0];
                (x * x.atan() - 0.5 * (1.0 + x * x).ln()) / PI
            }
            LawKind::Quadratic { offset } => {
                0.5 * z
                    .iter()
                    .zip(offset)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            }
        }
    }

    pub fn psi(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.psi_into(z, &mut out);
        out
    }

    pub fn psi_into(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        match &self.kind {
            LawKind::Arctan => out[0] = z[0].atan() / PI,
            LawKind::Quadratic { offset } => {
                for ((o, a), b) in out.iter_mut().zip(z).zip(offset) {
                    *o = a - b;
                }
            }
        }
    }

    pub fn grad_psi(&self, z: &[f64]) -> Jacobian {
        debug_assert_eq!(z.len(), self.dim);
        match &self.kind {
            LawKind::Arctan => Jacobian::Scalar(1.0 / (PI * (1.0 + z[0] * z[0]))),
            LawKind::Quadratic { .. } => Jacobian::ScaledIdentity {
                dim: self.dim,
                factor: 1.0,
            },
        }
    }

    /// Squared induced norm of the gradient Jacobian at `z`.
    pub fn grad_norm_sq(&self, z: &[f64]) -> f64 {
        match &self.kind {
            LawKind::Arctan => {
                let d = 1.0 / (PI * (1.0 + z[0] * z[0]));
                d * d
            }
            LawKind::Quadratic { .. } => 1.0,
        }
    }

    /// Global bound `K` with `||∇psi(z)|| <= K` everywhere, when attached.
    pub fn global_grad_bound(&self) -> Option<f64> {
        match &self.kind {
            LawKind::Arctan => Some(1.0 / PI),
            LawKind::Quadratic { .. } => None,
        }
    }

    /// Bound on `||psi(z)||` over all of space, when attached.
    pub fn value_bound(&self) -> Option<f64> {
        match &self.kind {
            LawKind::Arctan => Some(0.5),
            LawKind::Quadratic { .. } => None,
        }
    }

    /// Max of `||∇psi||` over the centered ball of the given radius. Both
    /// built-ins attain their maximum at the origin, so the radius does not
    /// matter; it is kept in the signature for laws where it would.
    pub fn grad_bound_on_ball(&self, _radius: f64) -> f64 {
        match &self.kind {
            LawKind::Arctan => 1.0 / PI,
            LawKind::Quadratic { .. } => 1.0,
        }
    }

    pub fn target_set(&self) -> TargetSet {
        match &self.kind {
            LawKind::Arctan => TargetSet::Origin,
            LawKind::Quadratic { offset } => TargetSet::Point(offset.clone()),
        }
    }

    /// Upper bound on `||∇psi(x)||²` over the box `[lower, upper]`.
    ///
    /// Both built-ins admit exact evaluations: the arctan gradient magnitude
    /// is even and nonincreasing away from zero, so the box maximum sits at
    /// the endpoint closest to zero; the quadratic Jacobian is the identity.
    /// Laws without such structure go through [`lambda_estimate_grid`].
    pub fn lambda_estimate(&self, lower: &[f64], upper: &[f64]) -> Result<f64> {
        check_interval(lower, upper, self.dim)?;
        match &self.kind {
            LawKind::Arctan => {
                let (lo, hi) = (lower[0], upper[0]);
                let at = |x: f64| {
                    let d = 1.0 / (PI * (1.0 + x * x));
                    d * d
                };
                Ok(if lo > 0.0 {
                    at(lo)
                } else if hi < 0.0 {
                    at(hi)
                } else {
                    at(0.0)
                })
            }
            LawKind::Quadratic { .. } => Ok(1.0),
        }
    }
}

fn check_interval(lower: &[f64], upper: &[f64], dim: usize) -> Result<()> {
    if lower.len() != dim || upper.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "interval bounds must have {dim} components, got {} and {}",
            lower.len(),
            upper.len()
        )));
    }
    for (c, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
        if lo > hi {
            return Err(Error::InvalidInterval {
                lower: lo,
                upper: hi,
                component: c,
            });
        }
    }
    Ok(())
}

/// General box maximization of `||∇psi||²` by adaptive grid refinement.
///
/// Nine samples per dimension, the grid shrinking around the incumbent by a
/// factor of three per level until the per-level improvement drops below
/// `1e-9`; the result is inflated by a `1e-6` relative margin so it remains
/// an upper bound despite the sampling. This is the fallback for laws whose
/// gradient structure offers no exact box maximum.
pub fn lambda_estimate_grid(law: &CouplingLaw, lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_interval(lower, upper, law.dim())?;
    let dim = law.dim();
    let pts = 9usize;
    let mut center: Vec<f64> = lower.iter().zip(upper).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut half: Vec<f64> = lower.iter().zip(upper).map(|(a, b)| 0.5 * (b - a)).collect();

    let mut x = vec![0.0; dim];
    let mut best_val = f64::NEG_INFINITY;
    let mut best_x = center.clone();
    loop {
        let mut level_best = f64::NEG_INFINITY;
        let mut level_x = best_x.clone();
        let mut idx = vec![0usize; dim];
        'grid: loop {
            for c in 0..dim {
                let frac = if pts == 1 { 0.0 } else { idx[c] as f64 / (pts - 1) as f64 };
                x[c] = (center[c] - half[c] + 2.0 * half[c] * frac)
                    .clamp(lower[c], upper[c]);
            }
            let val = law.grad_norm_sq(&x);
            if val > level_best {
                level_best = val;
                level_x.copy_from_slice(&x);
            }
            // advance mixed-radix counter
            let mut c = 0;
            loop {
                if c == dim {
                    break 'grid;
                }
                idx[c] += 1;
                if idx[c] < pts {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
        }
        let improvement = level_best - best_val;
        if level_best > best_val {
            best_val = level_best;
            best_x = level_x;
        }
        if improvement.abs() < 1e-9 {
            break;
        }
        center.copy_from_slice(&best_x);
        for h in half.iter_mut() {
            *h /= 3.0;
        }
    }
    Ok(best_val * (1.0 + 1e-6))
}
