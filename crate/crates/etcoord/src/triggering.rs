//! Edge-event scheduling rules.
//!
//! Every edge carries a clock that decays from `b` to `a`; an edge event
//! fires when the clock reaches `a`. The three schemes differ in what drives
//! the decay:
//!
//! * event-triggered (`etc`): the clock integrates
//!   `dphi = -(1/sigma)(1 + phi² ||∇psi(z)||²)` against the continuously
//!   measured edge variable `z`;
//! * time-triggered (`ttc`): the decay is evaluated against the global
//!   gradient bound `K`, turning the clock into a fixed deadline `T`
//!   (the maximum allowable time between edge events);
//! * self-triggered (`stc`): at each event the edge computes an upper bound
//!   `lambda(t)` on `||∇psi(z(t))||²` over the reachable interval predicted
//!   from the incremental certificate, integrates the clock against it, and
//!   sleeps for the resulting interval.

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingLaw;
use crate::dynamics::{incremental_envelope, IncrementalCertificate};
use crate::error::{Error, Result};
use crate::graph::Topology;

/// Edge-event scheduling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "etc")]
    EventTriggered,
    #[serde(rename = "ttc")]
    TimeTriggered,
    #[serde(rename = "stc")]
    SelfTriggered,
}

impl Scheme {
    pub fn tag(&self) -> &'static str {
        match self {
            Scheme::EventTriggered => "etc",
            Scheme::TimeTriggered => "ttc",
            Scheme::SelfTriggered => "stc",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "etc" => Ok(Scheme::EventTriggered),
            "ttc" => Ok(Scheme::TimeTriggered),
            "stc" => Ok(Scheme::SelfTriggered),
            other => Err(Error::InvalidParameter(format!(
                "unknown scheme '{other}', expected etc, ttc or stc"
            ))),
        }
    }
}

/// Per-edge clock parameters `0 <= a < b`, `sigma > 0`. The parameters are
/// shared by both endpoints of the edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeClockParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

impl EdgeClockParams {
    pub fn new(a: f64, b: f64, sigma: f64) -> Result<Self> {
        if !(a >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clock lower threshold must be nonnegative, got {a}"
            )));
        }
        if !(b > a) {
            return Err(Error::InvalidParameter(format!(
                "clock reset value must exceed the threshold, got a={a}, b={b}"
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clock scale sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { a, b, sigma })
    }

    /// Upper bound `sigma (b - a)` on any inter-event interval of the edge.
    pub fn max_interval(&self) -> f64 {
        self.sigma * (self.b - self.a)
    }
}

/// Clock decay rate of the event-triggered scheme at clock value `phi` and
/// edge variable `z`. Always at most `-1/sigma`.
pub fn etc_clock_rate(phi: f64, z: &[f64], params: &EdgeClockParams, law: &CouplingLaw) -> f64 {
    -(1.0 + phi * phi * law.grad_norm_sq(z)) / params.sigma
}

/// Decay time from `b` to `a` of the clock run against a constant squared
/// gradient bound `k²`; closed form via the arctan antiderivative.
fn constant_gain_decay_time(params: &EdgeClockParams, k: f64) -> f64 {
    if k <= 0.0 {
        params.max_interval()
    } else {
        params.sigma / k * ((k * params.b).atan() - (k * params.a).atan())
    }
}

/// Maximum allowable time between two events of an edge: the clock decay
/// time when the gradient sits at its global bound `K`.
///
/// Requires a law that carries such a bound.
pub fn ttc_mate(params: &EdgeClockParams, law: &CouplingLaw) -> Result<f64> {
    let k = law.global_grad_bound().ok_or_else(|| {
        Error::UnsupportedScheme(
            "time-triggered deadlines need a coupling law with a global gradient bound".into(),
        )
    })?;
    Ok(constant_gain_decay_time(params, k))
}

/// Lower bound on the inter-event times of an edge whose edge variable stays
/// inside a ball on which the gradient norm is bounded by `k_bar`.
pub fn dwell_lower_bound(params: &EdgeClockParams, k_bar: f64) -> f64 {
    constant_gain_decay_time(params, k_bar)
}

/// Exact decay time of the frozen-gain clock `dphi = -(1/sigma)(1 + g phi²)`
/// from `phi` down to `target`.
pub fn clock_time_to(phi: f64, target: f64, gain: f64, sigma: f64) -> f64 {
    debug_assert!(phi >= target);
    if gain <= 0.0 {
        sigma * (phi - target)
    } else {
        let r = gain.sqrt();
        sigma / r * ((r * phi).atan() - (r * target).atan())
    }
}

/// Exact frozen-gain clock propagation by `dt`; the caller guarantees the
/// clock does not cross `-inf` within `dt` (checked against
/// [`clock_time_to`] first).
fn clock_advance(phi: f64, gain: f64, sigma: f64, dt: f64) -> f64 {
    if gain <= 0.0 {
        phi - dt / sigma
    } else {
        let r = gain.sqrt();
        let x = (r * phi).atan() - r * dt / sigma;
        debug_assert!(x > -std::f64::consts::FRAC_PI_2);
        x.tan() / r
    }
}

/// Decay time from `b` to `a` of the clock driven by a time-varying squared
/// gradient bound, integrated with the gain frozen per substep.
///
/// `gain_at` is called once per substep, in time order, with the substep's
/// right endpoint; for a nondecreasing gain this keeps the computed time a
/// lower bound on the exact one. Within a substep the clock is propagated in
/// closed form, so the only discretization effect is the gain freezing.
pub fn clock_decay_time(
    params: &EdgeClockParams,
    mut gain_at: impl FnMut(f64) -> f64,
    substep: f64,
) -> f64 {
    debug_assert!(substep > 0.0);
    let mut phi = params.b;
    let mut t = 0.0;
    // The gain is nonnegative, so the clock consumes at least substep/sigma
    // of clock value per substep and the loop is bounded.
    let max_iters = (params.max_interval() / substep).ceil() as usize + 2;
    for _ in 0..max_iters {
        let gain = gain_at(t + substep);
        let remaining = clock_time_to(phi, params.a, gain, params.sigma);
        if remaining <= substep {
            return t + remaining;
        }
        phi = clock_advance(phi, gain, params.sigma, substep);
        t += substep;
    }
    params.max_interval()
}

/// Self-triggered inter-event interval for an edge whose variable was
/// measured as `z` and whose endpoint outputs differed by `dv` at the event.
///
/// The reachable interval of the edge variable grows with the running
/// integral of the incremental envelope; the clock is integrated against the
/// gradient bound maximized over that interval. The result never exceeds
/// `sigma (b - a)` and never falls below the time-triggered deadline when
/// the law carries a global gradient bound.
pub fn stc_interval(
    z: &[f64],
    dv: &[f64],
    params: &EdgeClockParams,
    cert: &IncrementalCertificate,
    law: &CouplingLaw,
    degrees: (usize, usize),
) -> Result<f64> {
    let psi_bar = law.value_bound().ok_or_else(|| {
        Error::UnsupportedScheme(
            "self-triggered intervals need a coupling law with a global force bound".into(),
        )
    })?;
    let dim = law.dim();
    if z.len() != dim || dv.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "edge variable and output difference must have {dim} components, got {} and {}",
            z.len(),
            dv.len()
        )));
    }
    let input_bound = 2.0 * (degrees.0 + degrees.1) as f64 * psi_bar;
    let dv0 = dv.iter().map(|x| x * x).sum::<f64>().sqrt();
    let substep = params.max_interval() / 1024.0;

    let mut integral = 0.0;
    let mut t_prev = 0.0;
    let mut env_prev = incremental_envelope(cert, dv0, 0.0, input_bound);
    let mut lo = vec![0.0; dim];
    let mut hi = vec![0.0; dim];
    let gain_at = |t: f64| {
        let env = incremental_envelope(cert, dv0, t, input_bound);
        integral += 0.5 * (t - t_prev) * (env_prev + env);
        t_prev = t;
        env_prev = env;
        for c in 0..dim {
            lo[c] = z[c] - integral;
            hi[c] = z[c] + integral;
        }
        law.lambda_estimate(&lo, &hi)
            .expect("reachable interval is ordered by construction")
    };
    Ok(clock_decay_time(params, gain_at, substep))
}

/// Per-edge clock scales satisfying, at every node `i`,
/// `2 deg_i max{sigma_l over incident edges} C_i <= kappa_i`.
///
/// The built-in policy assigns each edge the tightest constraint among its
/// two endpoints, `sigma_l = min_i kappa_i / (2 deg_i C_i)`; nodes with
/// `C_i = 0` impose no constraint, and an edge constrained by neither
/// endpoint gets `default_sigma`.
pub fn select_sigma(
    topology: &Topology,
    kappa: &[f64],
    output_gain: &[f64],
    default_sigma: f64,
) -> Result<Vec<f64>> {
    let n = topology.node_count();
    if kappa.len() != n || output_gain.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "kappa and output gains must have one entry per node ({n})"
        )));
    }
    for (i, &k) in kappa.iter().enumerate() {
        if !(k > 0.0 && k < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa must lie in (0, 1), node {} has {k}",
                i + 1
            )));
        }
    }
    for (i, &c) in output_gain.iter().enumerate() {
        if !(c >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "output gain must be nonnegative, node {} has {c}",
                i + 1
            )));
        }
    }
    if !(default_sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "default sigma must be positive, got {default_sigma}"
        )));
    }
    Ok(topology
        .edges()
        .iter()
        .map(|&(tail, head)| {
            [tail, head]
                .iter()
                .filter_map(|&i| {
                    let c = output_gain[i - 1];
                    let deg = topology.degree(i);
                    if c > 0.0 && deg > 0 {
                        Some(kappa[i - 1] / (2.0 * deg as f64 * c))
                    } else {
                        None
                    }
                })
                .fold(f64::INFINITY, f64::min)
        })
        .map(|s| if s.is_finite() { s } else { default_sigma })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    // Decay times of the section-VII clock, frozen from an independent
    // adaptive integration of the constant-gain clock equation.
    const MATE_B1: f64 = 0.060_508_855_617_598_056;
    const MATE_B10: f64 = 0.248_657_162_485_024_8;

    fn params(b: f64) -> EdgeClockParams {
        EdgeClockParams::new(0.0, b, 1.0 / 16.0).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(EdgeClockParams::new(0.0, 1.0, 0.1).is_ok());
        assert!(EdgeClockParams::new(-0.1, 1.0, 0.1).is_err());
        assert!(EdgeClockParams::new(1.0, 1.0, 0.1).is_err());
        assert!(EdgeClockParams::new(0.5, 0.4, 0.1).is_err());
        assert!(EdgeClockParams::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn clock_rate_examples() {
        let law = CouplingLaw::arctan();
        let p = params(10.0);
        assert_eq!(etc_clock_rate(0.0, &[3.7], &p, &law), -16.0);
        let r = etc_clock_rate(10.0, &[0.0], &p, &law);
        assert!((r - (-178.113_893_827_740_44)).abs() < 1e-10);
        // even in z
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let z = rng.random_range(-5.0f64..5.0);
            let phi = rng.random_range(0.0f64..10.0);
            assert_eq!(
                etc_clock_rate(phi, &[z], &p, &law),
                etc_clock_rate(phi, &[-z], &p, &law)
            );
            assert!(etc_clock_rate(phi, &[z], &p, &law) <= -1.0 / p.sigma);
        }
    }

    #[test]
    fn mate_closed_form_values() {
        let law = CouplingLaw::arctan();
        let t1 = ttc_mate(&params(1.0), &law).unwrap();
        let t10 = ttc_mate(&params(10.0), &law).unwrap();
        assert!((t1 - MATE_B1).abs() < 1e-12);
        assert!((t10 - MATE_B10).abs() < 1e-12);
        // never larger than (sigma/K)(pi/2)
        let cap = params(1.0).sigma * PI * 0.5 / law.global_grad_bound().unwrap();
        for b in [1.0, 10.0, 100.0, 1e6] {
            let t = ttc_mate(&params(b), &law).unwrap();
            assert!(t > 0.0 && t < cap);
        }
    }

    #[test]
    fn mate_requires_global_bound() {
        let quad = CouplingLaw::quadratic(vec![0.0]).unwrap();
        assert!(matches!(
            ttc_mate(&params(1.0), &quad),
            Err(Error::UnsupportedScheme(_))
        ));
    }

    #[test]
    fn dwell_bound_examples() {
        let law = CouplingLaw::arctan();
        let p = params(10.0);
        let k = law.global_grad_bound().unwrap();
        assert_eq!(dwell_lower_bound(&p, k), ttc_mate(&p, &law).unwrap());
        // the gradient maximum over any centered ball sits at the origin
        assert_eq!(law.grad_bound_on_ball(1.0), k);
        // degrades gracefully as the bound grows
        assert!(dwell_lower_bound(&p, 1e9) < 1e-8);
        assert!(dwell_lower_bound(&p, 1e9) > 0.0);
        // zero bound reduces to the linear clock
        assert_eq!(dwell_lower_bound(&p, 0.0), p.max_interval());
    }

    #[test]
    fn frozen_gain_clock_helpers() {
        let p = params(10.0);
        // zero gain: linear decay over sigma (b - a)
        assert_eq!(clock_time_to(p.b, p.a, 0.0, p.sigma), p.max_interval());
        let t = clock_decay_time(&p, |_| 0.0, p.max_interval() / 1024.0);
        assert!((t - p.max_interval()).abs() <= 1e-9 * p.max_interval());
        // gain frozen at K^2: matches the deadline closed form
        let k = CouplingLaw::arctan().global_grad_bound().unwrap();
        let t = clock_decay_time(&p, |_| k * k, p.max_interval() / 1024.0);
        assert!((t - MATE_B10).abs() < 1e-11);
    }

    #[test]
    fn stc_interval_at_consensus_matches_deadline() {
        let law = CouplingLaw::arctan();
        let cert = IncrementalCertificate { rate: 1.0 };
        let p = params(10.0);
        // with z = 0 the reachable interval always straddles the origin and
        // the gain sits at its global maximum throughout
        let t = stc_interval(&[0.0], &[0.0], &p, &cert, &law, (2, 2)).unwrap();
        assert!((t - MATE_B10).abs() < 1e-9);
        assert!(t >= MATE_B10 - 1e-9);
        assert!(t <= p.max_interval() * (1.0 + 1e-12));
    }

    #[test]
    fn stc_interval_bracketed_and_monotone_in_distance() {
        let law = CouplingLaw::arctan();
        let cert = IncrementalCertificate { rate: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for b in [1.0, 10.0, 100.0] {
            let p = params(b);
            let mate = ttc_mate(&p, &law).unwrap();
            for _ in 0..50 {
                let z = rng.random_range(-5.0f64..5.0);
                let dv = rng.random_range(-1.0f64..1.0);
                let t = stc_interval(&[z], &[dv], &p, &cert, &law, (1, 2)).unwrap();
                assert!(t >= mate - 1e-9, "interval {t} below deadline {mate}");
                assert!(t <= p.max_interval() * (1.0 + 1e-12));
            }
            // an edge far from consensus sleeps longer than one at consensus
            let far = stc_interval(&[4.0], &[0.0], &p, &cert, &law, (2, 2)).unwrap();
            let near = stc_interval(&[0.0], &[0.0], &p, &cert, &law, (2, 2)).unwrap();
            assert!(far >= near);
        }
    }

    #[test]
    fn stc_interval_rejects_unbounded_law() {
        let quad = CouplingLaw::quadratic(vec![0.0]).unwrap();
        let cert = IncrementalCertificate { rate: 1.0 };
        assert!(matches!(
            stc_interval(&[0.0], &[0.0], &params(1.0), &cert, &quad, (1, 1)),
            Err(Error::UnsupportedScheme(_))
        ));
    }

    #[test]
    fn sigma_selection_examples() {
        let line = Topology::line(5).unwrap();
        let sigma = select_sigma(&line, &[0.25; 5], &[1.0; 5], 1.0).unwrap();
        // every edge touches a degree-2 node, so all constraints give 1/16
        assert_eq!(sigma, vec![1.0 / 16.0; 4]);

        let pair = Topology::line(2).unwrap();
        let sigma = select_sigma(&pair, &[0.5; 2], &[1.0; 2], 1.0).unwrap();
        assert_eq!(sigma, vec![0.25]);

        // zero output gain leaves the edge unconstrained
        let sigma = select_sigma(&pair, &[0.9; 2], &[0.0; 2], 0.125).unwrap();
        assert_eq!(sigma, vec![0.125]);

        assert!(select_sigma(&pair, &[1.0; 2], &[1.0; 2], 1.0).is_err());
        assert!(select_sigma(&pair, &[0.5; 2], &[-1.0; 2], 1.0).is_err());
    }

    #[test]
    fn selected_sigma_satisfies_node_inequality() {
        let tri = Topology::from_edges(4, vec![(1, 2), (2, 3), (1, 3), (3, 4)]).unwrap();
        let kappa = [0.25, 0.5, 0.3, 0.9];
        let gains = [1.0, 2.0, 0.5, 1.0];
        let sigma = select_sigma(&tri, &kappa, &gains, 1.0).unwrap();
        for i in 1..=4 {
            let max_incident = tri
                .incident_edges(i)
                .iter()
                .map(|&l| sigma[l])
                .fold(0.0f64, f64::max);
            assert!(2.0 * tri.degree(i) as f64 * max_incident * gains[i - 1] <= kappa[i - 1] + 1e-15);
        }
    }
}
