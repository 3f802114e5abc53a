//! Probe physics and truth temperature processes.
//!
//! The probe is a first-order lag: `dT/dt = (env - T) / tau`. Steps use the
//! exact exponential update, so there is no integrator error for a constant
//! environment. Readings add a per-unit bias and bounded uniform noise, then
//! quantize to the sensor resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

/// Default probe time constant in seconds. Solves `12 * exp(-12/tau) = 0.4`,
/// placing a 25 -> 37 degC contact exactly at the accuracy limit after 12 s.
pub const DEFAULT_TAU_S: f64 = 3.528;
pub const DEFAULT_ACCURACY_C: f64 = 0.4;
pub const DEFAULT_RESOLUTION_C: f64 = 0.01;
pub const WIRELESS_NOISE_AMP_C: f64 = 0.125;
pub const WIRED_NOISE_AMP_C: f64 = 0.054;

/// Sub-step ceiling when integrating against a time-varying environment.
const MAX_VARYING_STEP_S: f64 = 0.010;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("probe step requires dt > 0, got {0}")]
    NonPositiveDt(f64),
    #[error("invalid sensor spec: {0}")]
    InvalidSpec(String),
    #[error("invalid temperature source: {0}")]
    InvalidSource(String),
}

/// One linear piece of a heater program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSegment {
    pub rate_c_per_s: f64,
    pub duration_s: f64,
}

/// A truth temperature process the probe is exposed to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TemperatureSource {
    BodyConstant { value_c: f64 },
    RoomAmbient { value_c: f64 },
    /// Piecewise-linear ramp program; holds the final value after the last
    /// segment ends.
    HeaterProfile { start_c: f64, segments: Vec<RampSegment> },
}

impl TemperatureSource {
    pub fn validate(&self) -> Result<(), SensorError> {
        if let TemperatureSource::HeaterProfile { segments, .. } = self {
            for (i, seg) in segments.iter().enumerate() {
                if seg.duration_s <= 0.0 || !seg.duration_s.is_finite() {
                    return Err(SensorError::InvalidSource(format!(
                        "segment {i} duration must be > 0, got {}",
                        seg.duration_s
                    )));
                }
            }
        }
        Ok(())
    }

    /// Truth temperature at `t_s` seconds.
    pub fn at(&self, t_s: f64) -> f64 {
        match self {
            TemperatureSource::BodyConstant { value_c } => *value_c,
            TemperatureSource::RoomAmbient { value_c } => *value_c,
            TemperatureSource::HeaterProfile { start_c, segments } => {
                let mut temp = *start_c;
                let mut elapsed = 0.0;
                for seg in segments {
                    if t_s <= elapsed {
                        break;
                    }
                    let within = (t_s - elapsed).min(seg.duration_s);
                    temp += seg.rate_c_per_s * within;
                    elapsed += seg.duration_s;
                }
                temp
            }
        }
    }

    /// Whether the process is constant in time (a single exact probe step
    /// suffices regardless of dt).
    fn is_constant(&self) -> bool {
        matches!(
            self,
            TemperatureSource::BodyConstant { .. } | TemperatureSource::RoomAmbient { .. }
        )
    }
}

/// Static characteristics of one thermometer unit. `bias_c` is drawn once per
/// unit when the scenario is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub accuracy_c: f64,
    pub resolution_c: f64,
    pub noise_amp_c: f64,
    pub bias_c: f64,
    pub tau_s: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            accuracy_c: DEFAULT_ACCURACY_C,
            resolution_c: DEFAULT_RESOLUTION_C,
            noise_amp_c: WIRELESS_NOISE_AMP_C,
            bias_c: 0.0,
            tau_s: DEFAULT_TAU_S,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<(), SensorError> {
        if self.bias_c.abs() > self.accuracy_c {
            return Err(SensorError::InvalidSpec(format!(
                "|bias| {} exceeds accuracy {}",
                self.bias_c, self.accuracy_c
            )));
        }
        if self.noise_amp_c < 0.0 {
            return Err(SensorError::InvalidSpec("noise_amp must be >= 0".into()));
        }
        if self.resolution_c <= 0.0 {
            return Err(SensorError::InvalidSpec("resolution must be > 0".into()));
        }
        if self.tau_s <= 0.0 {
            return Err(SensorError::InvalidSpec("tau must be > 0".into()));
        }
        Ok(())
    }
}

/// Probe thermal state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeState {
    pub temp_c: f64,
    pub in_contact: bool,
    pub last_update: SimTime,
}

impl ProbeState {
    pub fn new(temp_c: f64) -> Self {
        ProbeState { temp_c, in_contact: false, last_update: SimTime::ZERO }
    }
}

/// Exact first-order response over `dt_s` against a constant environment:
/// `T' = env + (T - env) * exp(-dt/tau)`.
pub fn probe_step(temp_c: f64, env_c: f64, dt_s: f64, tau_s: f64) -> Result<f64, SensorError> {
    if dt_s <= 0.0 || !dt_s.is_finite() {
        return Err(SensorError::NonPositiveDt(dt_s));
    }
    Ok(env_c + (temp_c - env_c) * (-dt_s / tau_s).exp())
}

/// Rounds to the nearest multiple of `resolution`, half away from zero.
pub fn quantize(x: f64, resolution: f64) -> f64 {
    (x / resolution).round() * resolution
}

/// A reading as produced by the digital sensor: probe value plus unit bias
/// plus one bounded noise draw, quantized to the resolution.
pub fn sample(probe_temp_c: f64, spec: &SensorSpec, noise_draw_c: f64) -> f64 {
    debug_assert!(noise_draw_c.abs() <= spec.noise_amp_c + 1e-12);
    quantize(probe_temp_c + spec.bias_c + noise_draw_c, spec.resolution_c)
}

/// Advances a probe against a source up to time `to`. Constant sources take a
/// single exact step; ramp sources are sub-stepped with the environment held
/// at each sub-interval midpoint, which keeps the steady ramp-following lag
/// within ~1e-5 relative of the continuous value.
pub fn advance_probe(
    state: &mut ProbeState,
    source: &TemperatureSource,
    to: SimTime,
    tau_s: f64,
) -> Result<(), SensorError> {
    if to <= state.last_update {
        return Ok(());
    }
    let from_s = state.last_update.as_secs_f64();
    let to_s = to.as_secs_f64();
    if source.is_constant() {
        state.temp_c = probe_step(state.temp_c, source.at(to_s), to_s - from_s, tau_s)?;
    } else {
        let mut t = from_s;
        while t < to_s {
            let dt = (to_s - t).min(MAX_VARYING_STEP_S);
            let env = source.at(t + dt / 2.0);
            state.temp_c = probe_step(state.temp_c, env, dt, tau_s)?;
            t += dt;
        }
    }
    state.last_update = to;
    Ok(())
}

/// One thermometer unit: probe state plus the two environments it moves
/// between (the monitored body and the ambient room).
#[derive(Debug, Clone)]
pub struct Thermometer {
    pub spec: SensorSpec,
    pub probe: ProbeState,
    pub body: TemperatureSource,
    pub room: TemperatureSource,
}

impl Thermometer {
    /// Starts at rest in the room (probe equilibrated to the room value).
    pub fn new(spec: SensorSpec, body: TemperatureSource, room: TemperatureSource) -> Self {
        let room_c = room.at(0.0);
        Thermometer { spec, probe: ProbeState::new(room_c), body, room }
    }

    fn env(&self) -> &TemperatureSource {
        if self.probe.in_contact {
            &self.body
        } else {
            &self.room
        }
    }

    /// Brings the probe up to `now` against its current environment.
    pub fn advance_to(&mut self, now: SimTime) -> Result<(), SensorError> {
        let env = self.env().clone();
        advance_probe(&mut self.probe, &env, now, self.spec.tau_s)
    }

    /// Switches environment at `now`; subsequent steps integrate against the
    /// new one.
    pub fn set_contact(&mut self, in_contact: bool, now: SimTime) -> Result<(), SensorError> {
        self.advance_to(now)?;
        self.probe.in_contact = in_contact;
        Ok(())
    }

    /// Advances to `now` and produces a quantized reading.
    pub fn sample_at(&mut self, now: SimTime, noise_draw_c: f64) -> Result<f64, SensorError> {
        self.advance_to(now)?;
        Ok(sample(self.probe.temp_c, &self.spec, noise_draw_c))
    }

    /// Truth temperature of whatever the probe currently touches.
    pub fn truth_at(&self, t: SimTime) -> f64 {
        self.env().at(t.as_secs_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_sources_are_flat() {
        let body = TemperatureSource::BodyConstant { value_c: 37.0 };
        assert_eq!(body.at(0.0), 37.0);
        assert_eq!(body.at(123.4), 37.0);
    }

    #[test]
    fn heater_profile_integrates_piecewise() {
        let heater = TemperatureSource::HeaterProfile {
            start_c: 30.0,
            segments: vec![
                RampSegment { rate_c_per_s: 0.97, duration_s: 15.0 },
                RampSegment { rate_c_per_s: 4.3, duration_s: 13.0 },
            ],
        };
        assert_abs_diff_eq!(heater.at(0.0), 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(heater.at(15.0), 44.55, epsilon = 1e-9);
        assert_abs_diff_eq!(heater.at(28.0), 100.45, epsilon = 1e-9);
        // Held constant after the last segment.
        assert_abs_diff_eq!(heater.at(60.0), 100.45, epsilon = 1e-9);
    }

    #[test]
    fn heater_rejects_non_positive_durations() {
        let bad = TemperatureSource::HeaterProfile {
            start_c: 30.0,
            segments: vec![RampSegment { rate_c_per_s: 1.0, duration_s: 0.0 }],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn probe_step_matches_closed_form_contact() {
        // 12 s of contact from 25 degC room to a 37 degC body.
        let temp = probe_step(25.0, 37.0, 12.0, DEFAULT_TAU_S).unwrap();
        assert_abs_diff_eq!(temp, 37.0 - 12.0 * (-12.0 / DEFAULT_TAU_S).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(temp, 36.6001, epsilon = 5e-4);
        // 2 s of contact stays far outside the accuracy band.
        let short = probe_step(25.0, 37.0, 2.0, DEFAULT_TAU_S).unwrap();
        assert_abs_diff_eq!(short, 30.1926, epsilon = 5e-4);
        assert!((37.0 - short).abs() > DEFAULT_ACCURACY_C);
    }

    #[test]
    fn probe_step_fixed_point_and_semigroup() {
        assert_eq!(probe_step(37.0, 37.0, 100.0, 3.528).unwrap(), 37.0);
        let two_steps =
            probe_step(probe_step(25.0, 37.0, 6.0, 3.528).unwrap(), 37.0, 6.0, 3.528).unwrap();
        let one_step = probe_step(25.0, 37.0, 12.0, 3.528).unwrap();
        assert_abs_diff_eq!(two_steps, one_step, epsilon = 1e-12);
    }

    #[test]
    fn probe_step_rejects_non_positive_dt() {
        assert_eq!(probe_step(25.0, 37.0, 0.0, 3.528), Err(SensorError::NonPositiveDt(0.0)));
        assert!(probe_step(25.0, 37.0, -1.0, 3.528).is_err());
    }

    #[test]
    fn quantize_rounds_half_away_from_zero() {
        assert_abs_diff_eq!(quantize(36.987, 0.01), 36.99, epsilon = 1e-12);
        assert_abs_diff_eq!(quantize(37.125, 0.01), 37.13, epsilon = 1e-12);
        assert_abs_diff_eq!(quantize(-37.125, 0.01), -37.13, epsilon = 1e-12);
        // Idempotent.
        let q = quantize(36.98713, 0.01);
        assert_abs_diff_eq!(quantize(q, 0.01), q, epsilon = 1e-12);
    }

    #[test]
    fn sample_identity_and_rounding() {
        let spec = SensorSpec::default();
        assert_abs_diff_eq!(sample(37.0, &spec, 0.0), 37.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sample(36.987, &spec, 0.0), 36.99, epsilon = 1e-12);
    }

    #[test]
    fn samples_stay_inside_the_noise_band() {
        let spec = SensorSpec::default();
        let mut stream = crate::rng::RngStream::new(11, 2);
        for _ in 0..60 {
            let noise = stream.uniform(-spec.noise_amp_c, spec.noise_amp_c).unwrap();
            let reading = sample(37.0, &spec, noise);
            assert!((36.875..=37.125 + spec.resolution_c / 2.0).contains(&reading));
            assert!(
                (reading - 37.0).abs()
                    <= spec.bias_c.abs() + spec.noise_amp_c + spec.resolution_c / 2.0 + 1e-12
            );
        }
    }

    #[test]
    fn thermometer_contact_cycle() {
        let spec = SensorSpec { noise_amp_c: 0.0, ..SensorSpec::default() };
        let mut therm = Thermometer::new(
            spec,
            TemperatureSource::BodyConstant { value_c: 37.0 },
            TemperatureSource::RoomAmbient { value_c: 25.0 },
        );
        therm.set_contact(true, SimTime::ZERO).unwrap();
        let reading = therm.sample_at(SimTime::from_secs(12), 0.0).unwrap();
        assert_abs_diff_eq!(reading, 36.60, epsilon = 1e-9);
        // Release into the room; long dwell converges back within resolution.
        therm.set_contact(false, SimTime::from_secs(12)).unwrap();
        let rested = therm.sample_at(SimTime::from_secs(120), 0.0).unwrap();
        assert_abs_diff_eq!(rested, 25.0, epsilon = spec.resolution_c / 2.0 + 1e-12);
    }

    #[test]
    fn advance_probe_split_equals_single_advance() {
        let src = TemperatureSource::BodyConstant { value_c: 37.0 };
        let mut a = ProbeState::new(25.0);
        let mut b = ProbeState::new(25.0);
        advance_probe(&mut a, &src, SimTime::from_secs(10), 3.528).unwrap();
        advance_probe(&mut a, &src, SimTime::from_secs(20), 3.528).unwrap();
        advance_probe(&mut b, &src, SimTime::from_secs(20), 3.528).unwrap();
        assert_abs_diff_eq!(a.temp_c, b.temp_c, epsilon = 1e-12);
    }

    #[test]
    fn ramp_following_lag_approaches_rate_times_tau() {
        // A long slow ramp settles to a tracking lag of rate * tau.
        let rate = 0.97;
        let src = TemperatureSource::HeaterProfile {
            start_c: 30.0,
            segments: vec![RampSegment { rate_c_per_s: rate, duration_s: 60.0 }],
        };
        let mut probe = ProbeState::new(30.0);
        advance_probe(&mut probe, &src, SimTime::from_secs(60), DEFAULT_TAU_S).unwrap();
        let lag = src.at(60.0) - probe.temp_c;
        assert_abs_diff_eq!(lag, rate * DEFAULT_TAU_S, epsilon = 1e-3);
    }
}
