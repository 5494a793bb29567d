//! Hybrid execution engine: flow integration with event localization,
//! prioritized jump resolution, and hybrid-time trajectory recording.
//!
//! A state flows while every edge trigger is strictly inside its interval
//! and jumps when at least one reaches its threshold. Flows advance the
//! positions, internal states and (for the event-triggered scheme) the edge
//! clocks with a classical fourth-order one-step method; the sampled edge
//! variables are constant between events, so the stacked control is frozen
//! per flow interval. Jumps refresh one edge at a time, lowest edge index
//! first, so simultaneous threshold crossings resolve as a finite cascade
//! with no flow in between.
//!
//! Time is hybrid: pairs `(t, k)` of continuous time and a jump counter that
//! increments by exactly one per edge refresh.

use rand::distr::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::coupling::CouplingLaw;
use crate::dynamics::AgentModel;
use crate::error::{Error, Result};
use crate::graph::{IncidenceMatrix, Topology};
use crate::triggering::{stc_interval, ttc_mate, EdgeClockParams, Scheme};

/// Fully resolved, validated simulation setup shared by all runs of a
/// scenario. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Setup {
    pub topology: Topology,
    pub incidence: IncidenceMatrix,
    /// Position block size per node.
    pub np: usize,
    pub models: Vec<AgentModel>,
    pub laws: Vec<CouplingLaw>,
    pub params: Vec<EdgeClockParams>,
    pub scheme: Scheme,
    /// Lower end of the time-triggered jump window as a fraction of the
    /// deadline.
    pub epsilon_frac: f64,
    /// Sample each deadline uniformly from the jump window instead of firing
    /// periodically.
    pub aperiodic: bool,
}

impl Setup {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        topology: Topology,
        np: usize,
        models: Vec<AgentModel>,
        laws: Vec<CouplingLaw>,
        params: Vec<EdgeClockParams>,
        scheme: Scheme,
        epsilon_frac: f64,
        aperiodic: bool,
    ) -> Result<Self> {
        let n = topology.node_count();
        let m = topology.edge_count();
        if np == 0 {
            return Err(Error::InvalidParameter("position block size must be positive".into()));
        }
        if models.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n} agent models, got {}",
                models.len()
            )));
        }
        if laws.len() != m || params.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "expected {m} coupling laws and clock parameter sets, got {} and {}",
                laws.len(),
                params.len()
            )));
        }
        for (l, law) in laws.iter().enumerate() {
            if law.dim() != np {
                return Err(Error::ShapeMismatch(format!(
                    "coupling law on edge {} acts on dimension {}, expected {np}",
                    l + 1,
                    law.dim()
                )));
            }
        }
        for (i, model) in models.iter().enumerate() {
            if model.state_dim() != np {
                return Err(Error::ShapeMismatch(format!(
                    "agent {} has internal dimension {}, expected {np}",
                    i + 1,
                    model.state_dim()
                )));
            }
        }
        if !(epsilon_frac > 0.0 && epsilon_frac <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon fraction must lie in (0, 1], got {epsilon_frac}"
            )));
        }

        match scheme {
            Scheme::EventTriggered => {}
            Scheme::TimeTriggered => {
                for (l, (law, p)) in laws.iter().zip(&params).enumerate() {
                    ttc_mate(p, law).map_err(|_| {
                        Error::UnsupportedScheme(format!(
                            "time-triggered scheduling requires a global gradient bound on the \
                             coupling law; the law on edge {} provides none",
                            l + 1
                        ))
                    })?;
                }
            }
            Scheme::SelfTriggered => {
                for (l, law) in laws.iter().enumerate() {
                    if law.value_bound().is_none() {
                        return Err(Error::UnsupportedScheme(format!(
                            "self-triggered scheduling requires a global force bound on the \
                             coupling law; the law on edge {} provides none",
                            l + 1
                        )));
                    }
                }
                let first = &models[0];
                if !models.iter().all(|m| m == first) {
                    return Err(Error::UnsupportedScheme(
                        "self-triggered scheduling requires identical agent dynamics across the \
                         network"
                            .into(),
                    ));
                }
                if !first.output_is_identity() {
                    return Err(Error::UnsupportedScheme(
                        "self-triggered scheduling requires identity output maps".into(),
                    ));
                }
                if first.incremental().is_none() {
                    return Err(Error::UnsupportedScheme(
                        "self-triggered scheduling requires an incremental contraction \
                         certificate on the agent model"
                            .into(),
                    ));
                }
            }
        }

        let incidence = topology.incidence();
        Ok(Self {
            topology,
            incidence,
            np,
            models,
            laws,
            params,
            scheme,
            epsilon_frac,
            aperiodic,
        })
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.topology.edge_count()
    }

    /// Total internal-state length.
    pub fn v_dim(&self) -> usize {
        self.models.iter().map(|m| m.state_dim()).sum()
    }

    /// Offset of agent `i`'s block (0-based) in the stacked internal state.
    pub fn v_offset(&self, i: usize) -> usize {
        self.models[..i].iter().map(|m| m.state_dim()).sum()
    }

    /// Time-triggered deadlines per edge.
    pub fn periods(&self) -> Result<Vec<f64>> {
        self.laws
            .iter()
            .zip(&self.params)
            .map(|(law, p)| ttc_mate(p, law))
            .collect()
    }

    /// Per-node `kappa_i = 2 deg_i max{sigma_l} C_i` implied by the chosen
    /// clock scales, when every node carries an output gain and the result
    /// stays below one. Used by the energy monitor's flow-rate check.
    pub fn kappa_implied(&self) -> Option<Vec<f64>> {
        let mut kappa = Vec::with_capacity(self.node_count());
        for i in 1..=self.node_count() {
            let c = self.models[i - 1].passivity().output_gain()?;
            let max_sigma = self
                .topology
                .incident_edges(i)
                .iter()
                .map(|&l| self.params[l].sigma)
                .fold(0.0f64, f64::max);
            let k = 2.0 * self.topology.degree(i) as f64 * max_sigma * c;
            if !(k < 1.0) {
                return None;
            }
            kappa.push(k);
        }
        Some(kappa)
    }
}

/// Per-edge trigger scalars together with the scheme they belong to:
/// clock values (etc), elapsed times (ttc) or remaining sleep times (stc).
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState {
    pub scheme: Scheme,
    pub values: Vec<f64>,
}

/// Full hybrid state: stacked positions, stacked internal states, sampled
/// edge variables and the trigger scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub zhat: Vec<f64>,
    pub trigger: TriggerState,
}

/// One recorded point of a hybrid trajectory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub k: u64,
    pub state: HybridState,
}

/// One edge event. `edge` is 0-based; `z` and `dv` hold the refreshed edge
/// variable and the endpoint output difference at the event.
#[derive(Debug, Clone)]
pub struct EventRecord {
    pub t: f64,
    pub k: u64,
    pub edge: usize,
    pub z: Vec<f64>,
    pub dv: Vec<f64>,
}

/// Recorded trajectory: samples at the output cadence plus both sides of
/// every jump, and the event log.
#[derive(Debug, Clone)]
pub struct HybridTrajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    /// Hybrid time reached at the end of the run.
    pub end: (f64, u64),
}

/// Numerical configuration of a single run.
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub horizon: f64,
    /// Base flow step; additionally capped so no event-triggered clock moves
    /// more than an eighth of its interval per step.
    pub flow_step: f64,
    /// Time localization tolerance for threshold crossings.
    pub event_tolerance: f64,
    /// Output cadence of the trajectory recording.
    pub sample_every: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("horizon", self.horizon),
            ("flow_step", self.flow_step),
            ("event_tolerance", self.event_tolerance),
            ("sample_every", self.sample_every),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Initial-condition specification: explicit vectors or a uniform box for
/// the positions; internal states default to zero.
#[derive(Debug, Clone)]
pub struct InitSpec {
    pub p_min: f64,
    pub p_max: f64,
    pub p0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
}

/// Draws the initial hybrid state: positions explicit or uniform in the box,
/// internal states zero unless given, sampled edge variables matching the
/// true relative distances, and trigger scalars at their post-reset values
/// (clocks at `b`, elapsed times uniform over one deadline, sleep times from
/// the self-triggered interval of the initial measurement).
pub fn initial_state(setup: &Setup, init: &InitSpec, rng: &mut ChaCha8Rng) -> Result<HybridState> {
    let n = setup.node_count();
    let m = setup.edge_count();
    let np = setup.np;

    let p = match &init.p0 {
        Some(p0) => {
            if p0.len() != n * np {
                return Err(Error::ShapeMismatch(format!(
                    "explicit initial positions need {} entries, got {}",
                    n * np,
                    p0.len()
                )));
            }
            p0.clone()
        }
        None => {
            if !(init.p_min <= init.p_max) {
                return Err(Error::InvalidParameter(format!(
                    "empty position box [{}, {}]",
                    init.p_min, init.p_max
                )));
            }
            let dist = Uniform::new_inclusive(init.p_min, init.p_max)
                .map_err(|e| Error::InvalidParameter(format!("position box: {e}")))?;
            (0..n * np).map(|_| dist.sample(rng)).collect()
        }
    };

    let v = match &init.v0 {
        Some(v0) => {
            if v0.len() != setup.v_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "explicit initial internal states need {} entries, got {}",
                    setup.v_dim(),
                    v0.len()
                )));
            }
            v0.clone()
        }
        None => vec![0.0; setup.v_dim()],
    };

    let zhat = setup.incidence.relative_distances(&p, np)?;

    let values = match setup.scheme {
        Scheme::EventTriggered => setup.params.iter().map(|p| p.b).collect(),
        Scheme::TimeTriggered => {
            let periods = setup.periods()?;
            periods
                .iter()
                .map(|&t_l| {
                    let dist = Uniform::new(0.0, t_l).expect("deadline is positive");
                    dist.sample(rng)
                })
                .collect()
        }
        Scheme::SelfTriggered => {
            let cert = setup.models[0]
                .incremental()
                .expect("validated at setup construction");
            let mut values = Vec::with_capacity(m);
            let mut dv = vec![0.0; np];
            for l in 0..m {
                let (tail, head) = setup.topology.endpoints0(l);
                for c in 0..np {
                    dv[c] = v[setup.v_offset(head) + c] - v[setup.v_offset(tail) + c];
                }
                let z_l = &zhat[l * np..(l + 1) * np];
                let degrees = {
                    let (t1, h1) = setup.topology.edges()[l];
                    (setup.topology.degree(t1), setup.topology.degree(h1))
                };
                values.push(stc_interval(
                    z_l,
                    &dv,
                    &setup.params[l],
                    &cert,
                    &setup.laws[l],
                    degrees,
                )?);
            }
            values
        }
    };

    Ok(HybridState {
        p,
        v,
        zhat,
        trigger: TriggerState {
            scheme: setup.scheme,
            values,
        },
    })
}

/// Outcome of one flow step: edges whose triggers reached their thresholds
/// within the step, if any.
pub type FlowHit = Option<Vec<usize>>;

/// Single-run execution engine. Owns the live state and the recording; one
/// run is strictly single-threaded and deterministic given its RNG.
pub struct Engine<'a> {
    setup: &'a Setup,
    cfg: SimConfig,
    rng: ChaCha8Rng,

    t: f64,
    k: u64,
    p: Vec<f64>,
    v: Vec<f64>,
    zhat: Vec<f64>,
    /// Event-triggered clocks (empty for the other schemes).
    phi: Vec<f64>,
    /// Edges currently at their threshold (event-triggered bookkeeping).
    due: Vec<bool>,
    /// Absolute next event times (time- and self-triggered schemes).
    deadline: Vec<f64>,
    /// Absolute last event times (time-triggered scheme, for recording).
    last_event: Vec<f64>,
    periods: Vec<f64>,
    uhat: Vec<f64>,
    h_cap: f64,

    // scratch buffers for the one-step integrator
    y0: Vec<f64>,
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    zbuf: Vec<f64>,
    psibuf: Vec<f64>,

    samples: Vec<Sample>,
    events: Vec<EventRecord>,
}

/// Evaluates the flow field into `dy`. Layout of `y`: positions, stacked
/// internal states, then (event-triggered only) the clocks. The sampled
/// variables are constant on flows, so `uhat` enters as a frozen input; the
/// clocks are driven by the true edge variables recomputed from `y`'s
/// positions at every evaluation.
#[allow(clippy::too_many_arguments)]
fn flow_field(
    setup: &Setup,
    uhat: &[f64],
    y: &[f64],
    dy: &mut [f64],
    zbuf: &mut [f64],
    with_clocks: bool,
) {
    let np = setup.np;
    let n = setup.node_count();
    let nv = setup.v_dim();
    let (pos, rest) = y.split_at(n * np);
    let (vst, clocks) = rest.split_at(nv);
    let (dpos, drest) = dy.split_at_mut(n * np);
    let (dvst, dclocks) = drest.split_at_mut(nv);

    let mut voff = 0;
    for (i, model) in setup.models.iter().enumerate() {
        let sd = model.state_dim();
        let v_i = &vst[voff..voff + sd];
        model.output_into(v_i, &mut dpos[i * np..(i + 1) * np]);
        model.flow_into(v_i, &uhat[i * np..(i + 1) * np], &mut dvst[voff..voff + sd]);
        voff += sd;
    }

    if with_clocks {
        setup.incidence.relative_distances_into(pos, np, zbuf);
        for (l, (law, prm)) in setup.laws.iter().zip(&setup.params).enumerate() {
            let z_l = &zbuf[l * np..(l + 1) * np];
            let phi = clocks[l];
            dclocks[l] = -(1.0 + phi * phi * law.grad_norm_sq(z_l)) / prm.sigma;
        }
    }
}

impl<'a> Engine<'a> {
    pub fn new(
        setup: &'a Setup,
        cfg: SimConfig,
        initial: HybridState,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = setup.node_count();
        let m = setup.edge_count();
        let np = setup.np;
        let nv = setup.v_dim();
        if initial.p.len() != n * np || initial.v.len() != nv || initial.zhat.len() != m * np {
            return Err(Error::ShapeMismatch(
                "initial state dimensions do not match the setup".into(),
            ));
        }
        if initial.trigger.scheme != setup.scheme || initial.trigger.values.len() != m {
            return Err(Error::ShapeMismatch(
                "initial trigger state does not match the scheme".into(),
            ));
        }

        let dim = n * np + nv + if setup.scheme == Scheme::EventTriggered { m } else { 0 };
        let mut engine = Engine {
            setup,
            cfg,
            rng,
            t: 0.0,
            k: 0,
            p: initial.p,
            v: initial.v,
            zhat: initial.zhat,
            phi: Vec::new(),
            due: vec![false; m],
            deadline: Vec::new(),
            last_event: Vec::new(),
            periods: Vec::new(),
            uhat: vec![0.0; n * np],
            h_cap: f64::INFINITY,
            y0: vec![0.0; dim],
            ytmp: vec![0.0; dim],
            ynew: vec![0.0; dim],
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            zbuf: vec![0.0; m * np],
            psibuf: vec![0.0; m * np],
            samples: Vec::new(),
            events: Vec::new(),
        };

        let values = initial.trigger.values;
        match setup.scheme {
            Scheme::EventTriggered => {
                for (l, (&phi, prm)) in values.iter().zip(&setup.params).enumerate() {
                    if !(phi >= prm.a && phi <= prm.b) {
                        return Err(Error::FlowPrecondition(format!(
                            "clock {} starts at {phi}, outside [{}, {}]",
                            l + 1,
                            prm.a,
                            prm.b
                        )));
                    }
                    if phi <= prm.a {
                        engine.due[l] = true;
                    }
                }
                engine.phi = values;
                // cap so no clock can move more than (b - a)/8 per step,
                // using the gradient bound that holds along any trajectory
                let mut cap = f64::INFINITY;
                for (law, prm) in setup.laws.iter().zip(&setup.params) {
                    let g = law.grad_bound_on_ball(f64::INFINITY);
                    let rate = (1.0 + prm.b * prm.b * g * g) / prm.sigma;
                    cap = cap.min((prm.b - prm.a) / (8.0 * rate));
                }
                engine.h_cap = cap;
            }
            Scheme::TimeTriggered => {
                let periods = setup.periods()?;
                let mut deadline = Vec::with_capacity(m);
                let mut last_event = Vec::with_capacity(m);
                for (l, (&tau, &t_l)) in values.iter().zip(&periods).enumerate() {
                    if !(0.0..=t_l).contains(&tau) {
                        return Err(Error::FlowPrecondition(format!(
                            "timer {} starts at {tau}, outside [0, {t_l}]",
                            l + 1
                        )));
                    }
                    last_event.push(-tau);
                    let next = if setup.aperiodic {
                        let eps = setup.epsilon_frac * t_l;
                        let dist =
                            Uniform::new_inclusive(eps, t_l).expect("window is nonempty");
                        (dist.sample(&mut engine.rng) - tau).max(0.0)
                    } else {
                        t_l - tau
                    };
                    deadline.push(next);
                }
                engine.periods = periods;
                engine.deadline = deadline;
                engine.last_event = last_event;
            }
            Scheme::SelfTriggered => {
                for (l, &theta) in values.iter().enumerate() {
                    if !(theta >= 0.0) {
                        return Err(Error::FlowPrecondition(format!(
                            "sleep timer {} starts at {theta}, expected nonnegative",
                            l + 1
                        )));
                    }
                }
                engine.deadline = values;
            }
        }

        engine.refresh_control()?;
        Ok(engine)
    }

    pub fn time(&self) -> (f64, u64) {
        (self.t, self.k)
    }

    /// Snapshot of the live hybrid state with trigger scalars materialized.
    pub fn state(&self) -> HybridState {
        HybridState {
            p: self.p.clone(),
            v: self.v.clone(),
            zhat: self.zhat.clone(),
            trigger: TriggerState {
                scheme: self.setup.scheme,
                values: self.trigger_values(),
            },
        }
    }

    fn trigger_values(&self) -> Vec<f64> {
        match self.setup.scheme {
            Scheme::EventTriggered => self.phi.clone(),
            Scheme::TimeTriggered => self
                .last_event
                .iter()
                .zip(&self.periods)
                .map(|(&le, &t_l)| (self.t - le).clamp(0.0, t_l))
                .collect(),
            Scheme::SelfTriggered => self
                .deadline
                .iter()
                .map(|&d| (d - self.t).max(0.0))
                .collect(),
        }
    }

    /// Frozen stacked control for the current sampled edge variables.
    pub fn control(&self) -> &[f64] {
        &self.uhat
    }

    fn refresh_control(&mut self) -> Result<()> {
        let np = self.setup.np;
        for (l, law) in self.setup.laws.iter().enumerate() {
            law.psi_into(
                &self.zhat[l * np..(l + 1) * np],
                &mut self.psibuf[l * np..(l + 1) * np],
            );
        }
        self.setup
            .incidence
            .stacked_control_into(&self.psibuf, np, &mut self.uhat);
        for (i, model) in self.setup.models.iter().enumerate() {
            let u_i = &self.uhat[i * np..(i + 1) * np];
            if !model.admissible_input(u_i) {
                let bound = model.input_bound().unwrap_or(f64::INFINITY);
                return Err(Error::CertificateViolation(format!(
                    "agent {} commanded input {:?} outside the admissible range [-{bound}, \
                     {bound}] at t = {}; the attached certificates do not cover saturated \
                     operation",
                    i + 1,
                    u_i,
                    self.t
                )));
            }
        }
        Ok(())
    }

    fn pack_state(&mut self) {
        let np = self.setup.np;
        let n = self.setup.node_count();
        let nv = self.setup.v_dim();
        self.y0[..n * np].copy_from_slice(&self.p);
        self.y0[n * np..n * np + nv].copy_from_slice(&self.v);
        if self.setup.scheme == Scheme::EventTriggered {
            self.y0[n * np + nv..].copy_from_slice(&self.phi);
        }
    }

    fn unpack_state(&mut self) {
        let np = self.setup.np;
        let n = self.setup.node_count();
        let nv = self.setup.v_dim();
        self.p.copy_from_slice(&self.ynew[..n * np]);
        self.v.copy_from_slice(&self.ynew[n * np..n * np + nv]);
        if self.setup.scheme == Scheme::EventTriggered {
            self.phi.copy_from_slice(&self.ynew[n * np + nv..]);
        }
    }

    /// One fourth-order step of size `h` from `y0` into `ynew`.
    fn rk4(&mut self, h: f64) {
        let with_clocks = self.setup.scheme == Scheme::EventTriggered;
        let dim = self.y0.len();
        flow_field(self.setup, &self.uhat, &self.y0, &mut self.k1, &mut self.zbuf, with_clocks);
        for i in 0..dim {
            self.ytmp[i] = self.y0[i] + 0.5 * h * self.k1[i];
        }
        flow_field(self.setup, &self.uhat, &self.ytmp, &mut self.k2, &mut self.zbuf, with_clocks);
        for i in 0..dim {
            self.ytmp[i] = self.y0[i] + 0.5 * h * self.k2[i];
        }
        flow_field(self.setup, &self.uhat, &self.ytmp, &mut self.k3, &mut self.zbuf, with_clocks);
        for i in 0..dim {
            self.ytmp[i] = self.y0[i] + h * self.k3[i];
        }
        flow_field(self.setup, &self.uhat, &self.ytmp, &mut self.k4, &mut self.zbuf, with_clocks);
        for i in 0..dim {
            self.ynew[i] = self.y0[i]
                + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }

    /// Smallest clock margin of the tentative state `ynew` (event-triggered).
    fn min_clock_margin(&self) -> f64 {
        let base = self.setup.node_count() * self.setup.np + self.setup.v_dim();
        self.ynew[base..]
            .iter()
            .zip(&self.setup.params)
            .map(|(&phi, prm)| phi - prm.a)
            .fold(f64::INFINITY, f64::min)
    }

    /// Advances the state by one integration step of at most `h`, landing
    /// exactly on `t_land` when the full step is taken. For the
    /// event-triggered scheme a threshold crossing inside the step is
    /// localized by bisection and the state is advanced exactly to it.
    fn step_once(&mut self, h: f64, t_land: f64) -> Result<FlowHit> {
        if self.setup.scheme == Scheme::EventTriggered {
            // entering with a clock already at its threshold means the jump
            // was not taken; treat it as immediately due
            let mut pre_due = Vec::new();
            for (l, (&phi, prm)) in self.phi.iter().zip(&self.setup.params).enumerate() {
                if phi - prm.a <= 0.0 {
                    pre_due.push(l);
                }
            }
            if !pre_due.is_empty() {
                for &l in &pre_due {
                    self.due[l] = true;
                    self.phi[l] = self.setup.params[l].a;
                }
                return Ok(Some(pre_due));
            }
        }

        self.pack_state();
        self.rk4(h);

        if self.setup.scheme == Scheme::EventTriggered && self.min_clock_margin() < 0.0 {
            // bisect the crossing time within (0, h]
            let mut lo = 0.0;
            let mut hi = h;
            for _ in 0..60 {
                if hi - lo <= self.cfg.event_tolerance {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                self.rk4(mid);
                if self.min_clock_margin() < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            self.rk4(hi);
            self.unpack_state();
            self.t += hi;

            // snap every clock within one localization window of its
            // threshold and mark it due; the closest clock is always due
            let mut hit = Vec::new();
            let mut closest = 0;
            let mut closest_margin = f64::INFINITY;
            let np = self.setup.np;
            self.setup
                .incidence
                .relative_distances_into(&self.p, np, &mut self.zbuf);
            for l in 0..self.setup.edge_count() {
                let prm = &self.setup.params[l];
                let margin = self.phi[l] - prm.a;
                if margin < closest_margin {
                    closest_margin = margin;
                    closest = l;
                }
                let z_l = &self.zbuf[l * np..(l + 1) * np];
                let rate =
                    (1.0 + prm.b * prm.b * self.setup.laws[l].grad_norm_sq(z_l)) / prm.sigma;
                if margin <= rate * (self.cfg.event_tolerance + (hi - lo)) * 4.0 {
                    hit.push(l);
                }
            }
            if !hit.contains(&closest) {
                hit.push(closest);
                hit.sort_unstable();
            }
            for &l in &hit {
                self.due[l] = true;
                self.phi[l] = self.setup.params[l].a;
            }
            return Ok(Some(hit));
        }

        self.unpack_state();
        self.t = if h == t_land - self.t { t_land } else { self.t + h };
        Ok(None)
    }

    /// Flows until `target`, stopping early at a localized clock crossing.
    fn advance_to(&mut self, target: f64) -> Result<FlowHit> {
        while self.t < target {
            let h = (target - self.t).min(self.cfg.flow_step).min(self.h_cap);
            if let Some(hit) = self.step_once(h, target)? {
                return Ok(Some(hit));
            }
        }
        Ok(None)
    }

    /// Public single-step operation: advances by at most `h`, truncating at
    /// the next scheduled deadline, and reports edges that reached their
    /// threshold. The state must be in the flow set on entry.
    pub fn flow_step(&mut self, h: f64) -> Result<FlowHit> {
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {h}"
            )));
        }
        self.check_flow_set()?;
        match self.setup.scheme {
            Scheme::EventTriggered => self.advance_to(self.t + h),
            _ => {
                let next = self.min_deadline().expect("deadlines exist for timer schemes");
                let target = (self.t + h).min(next);
                self.advance_to(target)?;
                if self.t == next {
                    Ok(Some(self.deadline_due()))
                } else {
                    Ok(None)
                }
            }
        }
    }

    fn check_flow_set(&self) -> Result<()> {
        match self.setup.scheme {
            Scheme::EventTriggered => {
                for (l, (&phi, prm)) in self.phi.iter().zip(&self.setup.params).enumerate() {
                    if !(phi >= prm.a && phi <= prm.b) {
                        return Err(Error::FlowPrecondition(format!(
                            "clock {} is at {phi}, outside [{}, {}]",
                            l + 1,
                            prm.a,
                            prm.b
                        )));
                    }
                }
            }
            _ => {
                for (l, &d) in self.deadline.iter().enumerate() {
                    if d < self.t {
                        return Err(Error::FlowPrecondition(format!(
                            "edge {} has an unserved deadline at t = {d}",
                            l + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn min_deadline(&self) -> Option<f64> {
        self.deadline.iter().copied().reduce(f64::min)
    }

    fn deadline_due(&self) -> Vec<usize> {
        self.deadline
            .iter()
            .enumerate()
            .filter(|(_, &d)| d <= self.t)
            .map(|(l, _)| l)
            .collect()
    }

    fn lowest_due(&self) -> Option<usize> {
        match self.setup.scheme {
            Scheme::EventTriggered => self.due.iter().position(|&d| d),
            _ => self
                .deadline
                .iter()
                .position(|&d| d <= self.t),
        }
    }

    /// Takes the jump of the lowest-index edge at its threshold: refreshes
    /// that edge's sampled variable, resets its trigger, increments the jump
    /// counter. Positions, internal states and all other edges are
    /// untouched. Errors outside the jump set.
    pub fn jump(&mut self) -> Result<usize> {
        let l = self.lowest_due().ok_or_else(|| {
            Error::JumpPrecondition(format!("no edge is at its threshold at t = {}", self.t))
        })?;
        self.jump_edge(l)?;
        self.refresh_control()?;
        Ok(l)
    }

    fn jump_edge(&mut self, l: usize) -> Result<()> {
        let np = self.setup.np;
        let mut z_l = vec![0.0; np];
        self.setup
            .incidence
            .edge_difference_into(&self.p, np, l, &mut z_l);
        self.zhat[l * np..(l + 1) * np].copy_from_slice(&z_l);

        // endpoint output difference, oriented like the edge variable
        let (tail, head) = self.setup.topology.endpoints0(l);
        let mut y_tail = vec![0.0; np];
        let mut y_head = vec![0.0; np];
        let vt = self.setup.v_offset(tail);
        let vh = self.setup.v_offset(head);
        self.setup.models[tail]
            .output_into(&self.v[vt..vt + self.setup.models[tail].state_dim()], &mut y_tail);
        self.setup.models[head]
            .output_into(&self.v[vh..vh + self.setup.models[head].state_dim()], &mut y_head);
        let dv: Vec<f64> = y_head.iter().zip(&y_tail).map(|(a, b)| a - b).collect();

        match self.setup.scheme {
            Scheme::EventTriggered => {
                self.phi[l] = self.setup.params[l].b;
                self.due[l] = false;
            }
            Scheme::TimeTriggered => {
                self.last_event[l] = self.t;
                let t_l = self.periods[l];
                let next = if self.setup.aperiodic {
                    let eps = self.setup.epsilon_frac * t_l;
                    Uniform::new_inclusive(eps, t_l)
                        .expect("window is nonempty")
                        .sample(&mut self.rng)
                } else {
                    t_l
                };
                self.deadline[l] = self.t + next;
            }
            Scheme::SelfTriggered => {
                let cert = self.setup.models[0]
                    .incremental()
                    .expect("validated at setup construction");
                let (t1, h1) = self.setup.topology.edges()[l];
                let degrees = (self.setup.topology.degree(t1), self.setup.topology.degree(h1));
                let interval = stc_interval(
                    &z_l,
                    &dv,
                    &self.setup.params[l],
                    &cert,
                    &self.setup.laws[l],
                    degrees,
                )?;
                self.deadline[l] = self.t + interval;
            }
        }

        self.k += 1;
        self.events.push(EventRecord {
            t: self.t,
            k: self.k,
            edge: l,
            z: z_l,
            dv,
        });
        self.record_sample();
        Ok(())
    }

    /// Resolves every edge currently at its threshold, lowest index first,
    /// as consecutive jumps with no flow in between, then refreshes the
    /// stacked control and checks input admissibility.
    fn cascade(&mut self) -> Result<()> {
        self.record_sample();
        let mut count = 0usize;
        while let Some(l) = self.lowest_due() {
            self.jump_edge(l)?;
            count += 1;
            debug_assert!(
                count <= self.setup.edge_count(),
                "an edge jumped twice in one cascade"
            );
        }
        self.refresh_control()
    }

    fn record_sample(&mut self) {
        if let Some(last) = self.samples.last() {
            if last.t.to_bits() == self.t.to_bits() && last.k == self.k {
                return;
            }
        }
        self.samples.push(Sample {
            t: self.t,
            k: self.k,
            state: self.state(),
        });
    }

    /// Runs the hybrid execution until the horizon, recording samples at the
    /// output cadence plus both sides of every jump.
    pub fn simulate(mut self) -> Result<HybridTrajectory> {
        self.record_sample();

        // serve anything already at its threshold at t = 0
        let initially_due = match self.setup.scheme {
            Scheme::EventTriggered => self.due.iter().any(|&d| d),
            _ => !self.deadline_due().is_empty(),
        };
        if initially_due {
            self.cascade()?;
        }

        let dt = self.cfg.sample_every;
        let horizon = self.cfg.horizon;
        let mut tick: u64 = 1;
        while self.t < horizon {
            let t_tick = tick as f64 * dt;
            let next_deadline = self.min_deadline().unwrap_or(f64::INFINITY);
            let target = horizon.min(t_tick).min(next_deadline);
            if self.advance_to(target)?.is_some() {
                self.cascade()?;
                continue;
            }
            if self.t == t_tick {
                self.record_sample();
                tick += 1;
            }
            if self.t == next_deadline {
                self.cascade()?;
            }
        }
        self.record_sample();

        Ok(HybridTrajectory {
            samples: self.samples,
            events: self.events,
            end: (self.t, self.k),
        })
    }
}

/// Convenience wrapper building an engine and running it to the horizon.
pub fn simulate(
    setup: &Setup,
    cfg: SimConfig,
    initial: HybridState,
    rng: ChaCha8Rng,
) -> Result<HybridTrajectory> {
    Engine::new(setup, cfg, initial, rng)?.simulate()
}
