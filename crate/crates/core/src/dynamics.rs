//! Exact slot flows.
//!
//! Time is measured in slots (`dt = 1`). Within a slot the control and the
//! disturbance are constant, so the velocity is piecewise linear with at most
//! one clamp event and positions integrate in closed form.
//!
//! Velocity noise `dv` models imperfect speed holding at the speed limit. A
//! robot cruising at `v_max` moves at `v_max + dv`. Below the limit the
//! effective speed is `min(v, v_max + dv)`, which coincides with the raw
//! speed except in a band of width `|dv|` under the limit when `dv < 0`; this
//! keeps the flow order preserving.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Disturbance {
    pub dv: f64,
    pub du: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotLimits {
    pub v_max: f64,
    pub u_max: f64,
    pub u_min: f64,
    pub d_lo: Disturbance,
    pub d_hi: Disturbance,
    /// Largest absolute observation errors `(position, velocity)`.
    pub obs_precision: (f64, f64),
}

impl RobotLimits {
    pub fn new(v_max: f64, u_max: f64, u_min: f64) -> Result<Self> {
        let lim = RobotLimits {
            v_max,
            u_max,
            u_min,
            d_lo: Disturbance::default(),
            d_hi: Disturbance::default(),
            obs_precision: (0.0, 0.0),
        };
        lim.validate()?;
        Ok(lim)
    }

    pub fn with_noise(self, d_lo: Disturbance, d_hi: Disturbance, obs_precision: (f64, f64)) -> Result<Self> {
        let lim = RobotLimits { d_lo, d_hi, obs_precision, ..self };
        lim.validate()?;
        Ok(lim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidLimits(m.to_string()));
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return bad("v_max must be positive");
        }
        if !(self.u_max > 0.0 && self.u_min < 0.0) {
            return bad("need u_min < 0 < u_max");
        }
        if self.d_lo.dv > 0.0 || self.d_lo.du > 0.0 || self.d_hi.dv < 0.0 || self.d_hi.du < 0.0 {
            return bad("disturbance bounds must bracket zero");
        }
        if !(self.d_lo.dv + self.v_max > 0.0) {
            return bad("velocity noise can stop a cruising robot");
        }
        if !(self.u_max + self.d_lo.du > 0.0) {
            return bad("throttle noise can cancel full throttle");
        }
        if !(self.u_min + self.d_hi.du < 0.0) {
            return bad("brake noise can cancel full brake");
        }
        if !(self.obs_precision.0 >= 0.0 && self.obs_precision.1 >= 0.0) {
            return bad("observation precision must be non-negative");
        }
        Ok(())
    }

    /// Slots after which every brake flow, started anywhere, has stopped.
    pub fn stop_horizon(&self) -> usize {
        (self.v_max / -(self.u_min + self.d_hi.du)).ceil() as usize + 1
    }

    pub fn check_control(&self, robot: usize, u: f64) -> Result<()> {
        if u >= self.u_min && u <= self.u_max {
            Ok(())
        } else {
            Err(Error::InvalidControl { robot, value: u, lo: self.u_min, hi: self.u_max })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State {
    pub x: f64,
    pub v: f64,
}

impl State {
    pub fn new(x: f64, v: f64) -> Self {
        State { x, v }
    }
}

/// Position after `t` time units of the velocity model; slots past the end of
/// `controls` count as stopped.
pub fn flow_velocity(x0: f64, controls: &[f64], t: f64) -> f64 {
    let full = t.floor() as usize;
    let mut x = x0;
    for k in 0..full {
        x += controls.get(k).copied().unwrap_or(0.0);
    }
    let frac = t - full as f64;
    if frac > 0.0 {
        x += frac * controls.get(full).copied().unwrap_or(0.0);
    }
    x
}

/// `int_0^t min(v0 + a s, cap) ds`.
fn ramp_integral(v0: f64, a: f64, t: f64, cap: f64) -> f64 {
    let plain = |v: f64, s: f64| v * s + 0.5 * a * s * s;
    if a > 0.0 {
        if v0 >= cap {
            return cap * t;
        }
        let sc = (cap - v0) / a;
        if sc >= t {
            plain(v0, t)
        } else {
            plain(v0, sc) + cap * (t - sc)
        }
    } else if a < 0.0 {
        if v0 <= cap {
            return plain(v0, t);
        }
        let sc = (cap - v0) / a;
        if sc >= t {
            cap * t
        } else {
            cap * sc + plain(cap, t - sc)
        }
    } else {
        v0.min(cap) * t
    }
}

/// State after `tau` in `[0, 1]` of a slot with constant control and disturbance.
pub fn slot_flow(s: State, u: f64, d: Disturbance, tau: f64, lim: &RobotLimits) -> State {
    let vmax = lim.v_max;
    let a = u + d.du;
    let cap = if d.dv < 0.0 { vmax + d.dv } else { f64::INFINITY };
    let cruise = |v: f64| if v >= vmax { vmax + d.dv } else { v.min(cap) };
    let v0 = s.v.clamp(0.0, vmax);
    let (t_ramp, v_end, held) = if a > 0.0 && v0 < vmax {
        let t1 = (vmax - v0) / a;
        if t1 >= tau {
            (tau, v0 + a * tau, None)
        } else {
            (t1, vmax, Some(vmax))
        }
    } else if a < 0.0 && v0 > 0.0 {
        let t0 = v0 / -a;
        if t0 >= tau {
            (tau, v0 + a * tau, None)
        } else {
            (t0, 0.0, Some(0.0))
        }
    } else {
        (0.0, v0, Some(v0))
    };
    let mut x = s.x + ramp_integral(v0, a, t_ramp, cap);
    if let Some(vh) = held {
        x += (tau - t_ramp) * cruise(vh);
    }
    State { x, v: v_end.clamp(0.0, vmax) }
}

/// Multi-slot second-order flow at time `t`; `disturbances` may be empty
/// (noise-free) or give one value per slot.
pub fn flow_second_order(
    s0: State,
    controls: &[f64],
    disturbances: &[Disturbance],
    t: f64,
    lim: &RobotLimits,
) -> Result<State> {
    if !(t >= 0.0) {
        return Err(Error::InvalidGeometry(format!("negative time {t}")));
    }
    let full = t.floor() as usize;
    let frac = t - full as f64;
    let needed = full + usize::from(frac > 0.0);
    if controls.len() < needed {
        return Err(Error::InvalidGeometry(format!("{} controls for {needed} slots", controls.len())));
    }
    let dist = |k: usize| disturbances.get(k).copied().unwrap_or_default();
    let mut s = s0;
    for (k, &u) in controls.iter().enumerate().take(needed) {
        lim.check_control(0, u)?;
        let tau = if k < full { 1.0 } else { frac };
        s = slot_flow(s, u, dist(k), tau, lim);
    }
    Ok(s)
}

/// Positions at `m / substeps` for `m = 1..=substeps` appended to `out`;
/// returns the end-of-slot state.
pub fn sample_slot(s: State, u: f64, d: Disturbance, substeps: usize, lim: &RobotLimits, out: &mut Vec<f64>) -> State {
    for m in 1..substeps {
        out.push(slot_flow(s, u, d, m as f64 / substeps as f64, lim).x);
    }
    let end = slot_flow(s, u, d, 1.0, lim);
    out.push(end.x);
    end
}

/// Sampled positions of the flow that applies `first` for one slot and then
/// `rest` for `slots - 1` more; `slots * substeps + 1` samples.
pub fn sample_flow(
    s: State,
    first: f64,
    rest: f64,
    d: Disturbance,
    slots: usize,
    substeps: usize,
    lim: &RobotLimits,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(slots * substeps + 1);
    out.push(s.x);
    let mut cur = s;
    for k in 0..slots {
        if k > 0 && cur.v == 0.0 && rest <= 0.0 {
            let x = cur.x;
            out.resize(out.len() + (slots - k) * substeps, x);
            break;
        }
        cur = sample_slot(cur, if k == 0 { first } else { rest }, d, substeps, lim, &mut out);
    }
    out
}

/// Largest position reached by the impulse control (one slot of full
/// throttle, then full brake) under disturbance `d`.
pub fn stop_position_with(s: State, lim: &RobotLimits, d: Disturbance) -> f64 {
    let s1 = slot_flow(s, lim.u_max, d, 1.0, lim);
    let a = lim.u_min + d.du;
    let cap = if d.dv < 0.0 { lim.v_max + d.dv } else { f64::INFINITY };
    s1.x + ramp_integral(s1.v, a, s1.v / -a, cap)
}

/// Final position of maximum braking under disturbance `d`.
pub fn brake_position_with(s: State, lim: &RobotLimits, d: Disturbance) -> f64 {
    let a = lim.u_min + d.du;
    let cap = if d.dv < 0.0 { lim.v_max + d.dv } else { f64::INFINITY };
    let v = s.v.clamp(0.0, lim.v_max);
    s.x + ramp_integral(v, a, v / -a, cap)
}

pub fn stop_position(s: State, lim: &RobotLimits) -> f64 {
    stop_position_with(s, lim, Disturbance::default())
}

/// Worst case for a box: its upper corner under the largest disturbance.
pub fn stop_position_nd(b: &NdState, lim: &RobotLimits) -> f64 {
    stop_position_with(b.hi, lim, lim.d_hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseExtent {
    /// Stop position offset from a standing start.
    pub distance: f64,
    /// Slots bounding every brake flow.
    pub horizon: usize,
}

pub fn impulse_extent(lim: &RobotLimits) -> ImpulseExtent {
    ImpulseExtent { distance: stop_position(State::default(), lim), horizon: lim.stop_horizon() }
}

/// Box of possible true states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdState {
    pub lo: State,
    pub hi: State,
}

impl NdState {
    pub fn point(s: State) -> Self {
        NdState { lo: s, hi: s }
    }

    pub fn new(lo: State, hi: State) -> Result<Self> {
        if lo.x <= hi.x && lo.v <= hi.v {
            Ok(NdState { lo, hi })
        } else {
            Err(Error::InvalidGeometry(format!("empty box {lo:?} {hi:?}")))
        }
    }

    /// Observation box `center +- (ex, ev)` with the velocity range clipped to
    /// `[0, v_max]`.
    pub fn around(center: State, ex: f64, ev: f64, v_max: f64) -> Self {
        NdState {
            lo: State::new(center.x - ex, (center.v - ev).clamp(0.0, v_max)),
            hi: State::new(center.x + ex, (center.v + ev).clamp(0.0, v_max)),
        }
    }

    pub fn contains(&self, s: State) -> bool {
        s.x >= self.lo.x && s.x <= self.hi.x && s.v >= self.lo.v && s.v <= self.hi.v
    }

    pub fn mean(&self) -> State {
        State::new(0.5 * (self.lo.x + self.hi.x), 0.5 * (self.lo.v + self.hi.v))
    }

    pub fn intersect(&self, other: &NdState) -> Option<NdState> {
        let lo = State::new(self.lo.x.max(other.lo.x), self.lo.v.max(other.lo.v));
        let hi = State::new(self.hi.x.min(other.hi.x), self.hi.v.min(other.hi.v));
        (lo.x <= hi.x && lo.v <= hi.v).then_some(NdState { lo, hi })
    }

    /// One slot of the box flow without observation.
    pub fn propagate(&self, u: f64, lim: &RobotLimits) -> NdState {
        NdState { lo: slot_flow(self.lo, u, lim.d_lo, 1.0, lim), hi: slot_flow(self.hi, u, lim.d_hi, 1.0, lim) }
    }
}

/// One slot of the information-state flow for every robot.
pub fn nd_propagate(
    boxes: &[NdState],
    u: &[f64],
    observations: Option<&[NdState]>,
    limits: &[RobotLimits],
) -> Result<Vec<NdState>> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            limits[i].check_control(i, u[i])?;
            let next = b.propagate(u[i], &limits[i]);
            match observations {
                Some(obs) => next.intersect(&obs[i]).ok_or(Error::InconsistentObservation(i)),
                None => Ok(next),
            }
        })
        .collect()
}
