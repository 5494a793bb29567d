//! Agent models together with the certificates the schedulers rely on.
//!
//! Every built-in agent is strictly passive from its input to its output
//! with a quadratic storage function, and additionally carries an
//! incremental contraction certificate used by the self-triggered scheduler
//! to over-approximate how fast two coupled agents can drift apart.

use crate::error::{Error, Result};

/// Choice of drift nonlinearity for [`AgentModel::monotone`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonotoneNonlinearity {
    /// `dv = -c v + u`
    Linear,
    /// `dv = -c v - v³ + u` (componentwise cube)
    Cubic,
}

#[derive(Debug, Clone, PartialEq)]
enum AgentKind {
    SaturatedLinear { sat_level: f64 },
    Monotone { c: f64, nonlinearity: MonotoneNonlinearity },
}

/// Agent internal dynamics `dv = f(v, u)` with output `y = h(v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    kind: AgentKind,
    state_dim: usize,
}

/// Storage-function data certifying strict passivity: `S(v) = ||v||²/2`,
/// dissipation `rho(v) = rho_coeff ||v||²`, and the output gain `C` with
/// `||h(v)||² <= C rho(v)` when one is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassivityCertificate {
    rho_coeff: f64,
    output_gain: Option<f64>,
}

impl PassivityCertificate {
    pub fn storage(&self, v: &[f64]) -> f64 {
        0.5 * v.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn rho(&self, v: &[f64]) -> f64 {
        self.rho_coeff * v.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn output_gain(&self) -> Option<f64> {
        self.output_gain
    }
}

/// Incremental contraction data: two copies of the agent driven by inputs
/// whose difference is bounded contract toward each other at rate `c`, with
/// input-to-increment gain `gamma(s) = s²/(2c)` and quadratic sandwich
/// `alpha_lower = alpha_upper = s²/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementalCertificate {
    /// Contraction rate `c > 0`.
    pub rate: f64,
}

impl IncrementalCertificate {
    pub fn gamma(&self, s: f64) -> f64 {
        s * s / (2.0 * self.rate)
    }

    pub fn alpha_lower(&self, s: f64) -> f64 {
        0.5 * s * s
    }

    pub fn alpha_upper(&self, s: f64) -> f64 {
        0.5 * s * s
    }

    pub fn alpha_lower_inv(&self, w: f64) -> f64 {
        (2.0 * w).max(0.0).sqrt()
    }
}

impl AgentModel {
    /// Double-integrator-style agent `dp = v`, `dv = -v + sat(u)` with the
    /// input clamped to `[-sat_level, sat_level]` componentwise.
    ///
    /// The attached certificates are those of the unsaturated dynamics; the
    /// simulation engine asserts at run time that commanded inputs stay in
    /// the admissible range and aborts otherwise.
    pub fn saturated_linear(sat_level: f64, state_dim: usize) -> Result<Self> {
        if !(sat_level > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "saturation level must be positive, got {sat_level}"
            )));
        }
        if state_dim == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        Ok(Self {
            kind: AgentKind::SaturatedLinear { sat_level },
            state_dim,
        })
    }

    /// Agent `dv = phi(v) + u` with `-phi` strongly monotone of modulus `c`.
    pub fn monotone(c: f64, nonlinearity: MonotoneNonlinearity, state_dim: usize) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "monotonicity modulus must be positive, got {c}"
            )));
        }
        if state_dim == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        Ok(Self {
            kind: AgentKind::Monotone { c, nonlinearity },
            state_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Internal flow `dv = f(v, u)`.
    pub fn flow_into(&self, v: &[f64], u: &[f64], dv: &mut [f64]) {
        debug_assert_eq!(v.len(), self.state_dim);
        debug_assert_eq!(u.len(), self.state_dim);
        match self.kind {
            AgentKind::SaturatedLinear { sat_level } => {
                for ((d, &vi), &ui) in dv.iter_mut().zip(v).zip(u) {
                    *d = -vi + ui.clamp(-sat_level, sat_level);
                }
            }
            AgentKind::Monotone { c, nonlinearity } => {
                for ((d, &vi), &ui) in dv.iter_mut().zip(v).zip(u) {
                    let drift = match nonlinearity {
                        MonotoneNonlinearity::Linear => -c * vi,
                        MonotoneNonlinearity::Cubic => -c * vi - vi * vi * vi,
                    };
                    *d = drift + ui;
                }
            }
        }
    }

    pub fn flow(&self, v: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dv = vec![0.0; self.state_dim];
        self.flow_into(v, u, &mut dv);
        dv
    }

    /// Output map `y = h(v)`; identity for every built-in model.
    pub fn output_into(&self, v: &[f64], y: &mut [f64]) {
        y.copy_from_slice(v);
    }

    pub fn output_is_identity(&self) -> bool {
        true
    }

    pub fn passivity(&self) -> PassivityCertificate {
        match self.kind {
            AgentKind::SaturatedLinear { .. } => PassivityCertificate {
                rho_coeff: 1.0,
                output_gain: Some(1.0),
            },
            AgentKind::Monotone { c, .. } => PassivityCertificate {
                rho_coeff: c,
                output_gain: Some(1.0 / c),
            },
        }
    }

    pub fn incremental(&self) -> Option<IncrementalCertificate> {
        match self.kind {
            AgentKind::SaturatedLinear { .. } => Some(IncrementalCertificate { rate: 1.0 }),
            AgentKind::Monotone { c, .. } => Some(IncrementalCertificate { rate: c }),
        }
    }

    /// Admissible input range within which the attached certificates hold.
    pub fn input_bound(&self) -> Option<f64> {
        match self.kind {
            AgentKind::SaturatedLinear { sat_level } => Some(sat_level),
            AgentKind::Monotone { .. } => None,
        }
    }

    pub fn admissible_input(&self, u: &[f64]) -> bool {
        match self.input_bound() {
            Some(bound) => u.iter().all(|x| x.abs() <= bound),
            None => true,
        }
    }
}

/// Over-approximation of `||v_i(t) - v_j(t)||` a time `elapsed` after an
/// exchange at which the difference was `dv0`, assuming the two inputs never
/// differ by more than `input_bound`:
///
/// `alpha_lower_inv( e^{-c t} alpha_upper(dv0) + (1 - e^{-c t}) gamma(input_bound) / c )`
///
/// Nondecreasing in `dv0` and `input_bound`.
pub fn incremental_envelope(
    cert: &IncrementalCertificate,
    dv0: f64,
    elapsed: f64,
    input_bound: f64,
) -> f64 {
    debug_assert!(elapsed >= 0.0);
    debug_assert!(dv0 >= 0.0 && input_bound >= 0.0);
    let c = cert.rate;
    let decay = (-c * elapsed).exp();
    cert.alpha_lower_inv(decay * cert.alpha_upper(dv0) + (1.0 - decay) * cert.gamma(input_bound) / c)
}
