use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::{motion_from_configs, track_feet, GeneralizedCoord};
use crate::motion::{BasePose, ContactFlags, Motion, NUM_FEET};
use crate::robot::RobotModel;

pub const G: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gait {
    Trot,
    Pace,
    Bound,
    Walk,
}

impl Gait {
    pub const ALL: [Gait; 4] = [Gait::Trot, Gait::Pace, Gait::Bound, Gait::Walk];

    /// Phase offsets of FL, FR, RL, RR as fractions of the period.
    pub fn offsets(self) -> [f64; NUM_FEET] {
        match self {
            Gait::Trot => [0.0, 0.5, 0.5, 0.0],
            Gait::Pace => [0.0, 0.5, 0.0, 0.5],
            Gait::Bound => [0.0, 0.0, 0.5, 0.5],
            Gait::Walk => [0.0, 0.5, 0.75, 0.25],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gait::Trot => "trot",
            Gait::Pace => "pace",
            Gait::Bound => "bound",
            Gait::Walk => "walk",
        }
    }
}

impl FromStr for Gait {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Gait::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::invalid("gait", None, format!("unknown gait {s:?}")))
    }
}

/// Periodic gait on flat ground, everything counted in frames so phase
/// boundaries land on frames.
#[derive(Debug, Clone, Copy)]
pub struct GaitParams {
    pub gait: Gait,
    /// Forward base speed (m/s).
    pub speed: f64,
    pub fps: f64,
    pub period_frames: i64,
    pub stance_frames: i64,
    pub cycles: usize,
    pub step_height: f64,
    /// Base height above the ground.
    pub height: f64,
}

impl GaitParams {
    /// Slow gait whose stance phases last long enough to count for foot slide.
    pub fn slow(gait: Gait) -> Self {
        let (period, stance) = match gait {
            Gait::Walk => (36, 27),
            _ => (30, 18),
        };
        Self {
            gait,
            speed: 0.3,
            fps: 30.0,
            period_frames: period,
            stance_frames: stance,
            cycles: 3,
            step_height: 0.08,
            height: 0.29,
        }
    }

    /// Brisk 1 m/s trot.
    pub fn fast_trot() -> Self {
        Self {
            gait: Gait::Trot,
            speed: 1.0,
            fps: 30.0,
            period_frames: 18,
            stance_frames: 12,
            cycles: 4,
            step_height: 0.08,
            height: 0.29,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.cycles * self.period_frames as usize
    }

    fn offset_frames(&self, leg: usize) -> i64 {
        (self.gait.offsets()[leg] * self.period_frames as f64).round() as i64
    }

    pub fn contacts(&self) -> Vec<ContactFlags> {
        (0..self.num_frames() as i64)
            .map(|i| {
                std::array::from_fn(|leg| {
                    (i - self.offset_frames(leg)).rem_euclid(self.period_frames) < self.stance_frames
                })
            })
            .collect()
    }
}

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

/// Foot positions under the hips of `model` with the base at the origin.
fn nominal_feet(model: &RobotModel) -> [Vector3<f64>; NUM_FEET] {
    std::array::from_fn(|leg| {
        let h = model.hip_offsets[leg];
        Vector3::new(h.x, h.y, 0.0)
    })
}

/// Joint-space motion reaching the given feet from the given base poses.
pub fn motion_from_feet(
    model: &RobotModel,
    fps: f64,
    base: &[BasePose],
    feet: &[[Vector3<f64>; NUM_FEET]],
    contacts: Vec<ContactFlags>,
) -> Result<Motion> {
    let mut q = GeneralizedCoord::zero(model);
    for d in 0..model.num_dofs() {
        q.joints[d] = match d % 3 {
            0 => 0.0,
            1 => 0.8,
            _ => -1.5,
        };
    }
    q.clamp_to_limits(model);
    let (configs, residual) = track_feet(model, base, feet, &q, 1e-9);
    if residual > 1e-7 {
        return Err(Error::IkFailure { frame: 0, residual });
    }
    let mut motion = motion_from_configs(model, fps, &configs);
    motion.contacts = Some(contacts);
    Ok(motion)
}

/// Kinematically exact gait for `model`: level base at constant speed along
/// x, stance feet fixed on z = 0, swing feet on a raised smooth arc.
pub fn gait_motion(model: &RobotModel, params: &GaitParams) -> Result<Motion> {
    let n = params.num_frames();
    let nominal = nominal_feet(model);
    let (p, s) = (params.period_frames, params.stance_frames);
    let dt = 1.0 / params.fps;
    // Footprint of stance `k`: under the hip at mid-stance.
    let footprint = |leg: usize, k: i64| {
        let mid = (k * p + params.offset_frames(leg)) as f64 + (s - 1) as f64 / 2.0;
        nominal[leg] + Vector3::x() * params.speed * mid * dt
    };
    let mut base = Vec::with_capacity(n);
    let mut feet = Vec::with_capacity(n);
    for i in 0..n as i64 {
        base.push(BasePose {
            position: Vector3::new(params.speed * i as f64 * dt, 0.0, params.height),
            orientation: UnitQuaternion::identity(),
        });
        feet.push(std::array::from_fn(|leg| {
            let rel = i - params.offset_frames(leg);
            let (k, local) = (rel.div_euclid(p), rel.rem_euclid(p));
            if local < s {
                footprint(leg, k)
            } else {
                let u = (local - s + 1) as f64 / (p - s + 1) as f64;
                let (a, b) = (footprint(leg, k), footprint(leg, k + 1));
                let mut f = a + (b - a) * smoothstep(u);
                f.z = params.step_height * (std::f64::consts::PI * u).sin();
                f
            }
        }));
    }
    motion_from_feet(model, params.fps, &base, &feet, params.contacts())
}

/// Vertical hop: stand, push off with constant acceleration, fly
/// ballistically, land with the mirrored deceleration, stand.
#[derive(Debug, Clone, Copy)]
pub struct HopParams {
    pub fps: f64,
    pub stand_frames: usize,
    pub push_frames: usize,
    /// Airborne time, a whole number of frames.
    pub flight_frames: usize,
    pub low_height: f64,
}

impl Default for HopParams {
    fn default() -> Self {
        Self {
            fps: 30.0,
            stand_frames: 8,
            push_frames: 4,
            flight_frames: 9,
            low_height: 0.28,
        }
    }
}

impl HopParams {
    pub fn flight_time(&self) -> f64 {
        self.flight_frames as f64 / self.fps
    }

    pub fn takeoff_speed(&self) -> f64 {
        G * self.flight_time() / 2.0
    }

    pub fn push_accel(&self) -> f64 {
        self.takeoff_speed() / (self.push_frames as f64 / self.fps)
    }

    pub fn takeoff_height(&self) -> f64 {
        let tp = self.push_frames as f64 / self.fps;
        self.low_height + 0.5 * self.push_accel() * tp * tp
    }

    pub fn num_frames(&self) -> usize {
        2 * (self.stand_frames + self.push_frames) + self.flight_frames + 1
    }

    /// First and last airborne frame.
    pub fn flight_range(&self) -> (usize, usize) {
        let takeoff = self.stand_frames + self.push_frames;
        (takeoff + 1, takeoff + self.flight_frames - 1)
    }

    /// Base height and whether the feet are on the ground at time `t`.
    pub fn base_height(&self, t: f64) -> (f64, bool) {
        let t0 = self.stand_frames as f64 / self.fps;
        let t1 = t0 + self.push_frames as f64 / self.fps;
        let t2 = t1 + self.flight_time();
        let t3 = t2 + self.push_frames as f64 / self.fps;
        let (a, v0, z_hi) = (self.push_accel(), self.takeoff_speed(), self.takeoff_height());
        let eps = 1e-9;
        if t <= t0 {
            (self.low_height, true)
        } else if t <= t1 + eps {
            let tau = t - t0;
            (self.low_height + 0.5 * a * tau * tau, true)
        } else if t < t2 - eps {
            let tau = t - t1;
            (z_hi + v0 * tau - 0.5 * G * tau * tau, false)
        } else if t < t3 {
            let tau = t - t2;
            (z_hi - v0 * tau + 0.5 * a * tau * tau, true)
        } else {
            (self.low_height, true)
        }
    }
}

pub fn hop_motion(model: &RobotModel, params: &HopParams) -> Result<Motion> {
    let nominal = nominal_feet(model);
    let n = params.num_frames();
    let z_hi = params.takeoff_height();
    let mut base = Vec::with_capacity(n);
    let mut feet = Vec::with_capacity(n);
    let mut contacts = Vec::with_capacity(n);
    for i in 0..n {
        let (z, ground) = params.base_height(i as f64 / params.fps);
        base.push(BasePose {
            position: Vector3::new(0.0, 0.0, z),
            orientation: UnitQuaternion::identity(),
        });
        let lift = if ground { 0.0 } else { z - z_hi };
        feet.push(nominal.map(|f| f + Vector3::z() * lift));
        contacts.push([ground; NUM_FEET]);
    }
    motion_from_feet(model, params.fps, &base, &feet, contacts)
}

/// Countermovement bounce: all feet planted, the base dips and rises
/// `cycles` times as `z = top − A·(1 − cos ωt)`, with standing lead-in and
/// lead-out. Peak vertical acceleration is `A·ω²` both ways.
#[derive(Debug, Clone, Copy)]
pub struct BounceParams {
    pub fps: f64,
    pub lead_frames: usize,
    pub period_frames: usize,
    pub cycles: usize,
    pub amplitude: f64,
    pub top_height: f64,
}

impl Default for BounceParams {
    fn default() -> Self {
        Self {
            fps: 30.0,
            lead_frames: 4,
            period_frames: 12,
            cycles: 3,
            amplitude: 0.06,
            top_height: 0.31,
        }
    }
}

impl BounceParams {
    pub fn peak_accel(&self) -> f64 {
        let w = 2.0 * std::f64::consts::PI * self.fps / self.period_frames as f64;
        self.amplitude * w * w
    }

    pub fn num_frames(&self) -> usize {
        2 * self.lead_frames + self.cycles * self.period_frames + 1
    }

    pub fn base_height(&self, frame: usize) -> f64 {
        let active = self.cycles * self.period_frames;
        match frame.checked_sub(self.lead_frames) {
            Some(i) if i <= active => {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / self.period_frames as f64;
                self.top_height - self.amplitude * (1.0 - phase.cos())
            }
            _ => self.top_height,
        }
    }
}

pub fn bounce_motion(model: &RobotModel, params: &BounceParams) -> Result<Motion> {
    let nominal = nominal_feet(model);
    let n = params.num_frames();
    let base = (0..n)
        .map(|i| BasePose {
            position: Vector3::new(0.0, 0.0, params.base_height(i)),
            orientation: UnitQuaternion::identity(),
        })
        .collect::<Vec<_>>();
    motion_from_feet(model, params.fps, &base, &vec![nominal; n], vec![[true; NUM_FEET]; n])
}

/// All feet planted with the base still at `height`.
pub fn standing_motion(model: &RobotModel, height: f64, fps: f64, frames: usize) -> Result<Motion> {
    let nominal = nominal_feet(model);
    let base = vec![
        BasePose {
            position: Vector3::new(0.0, 0.0, height),
            orientation: UnitQuaternion::identity(),
        };
        frames
    ];
    motion_from_feet(
        model,
        fps,
        &base,
        &vec![nominal; frames],
        vec![[true; NUM_FEET]; frames],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::QuadrupedDims;

    #[test]
    fn gait_schedules_follow_offsets() {
        let p = GaitParams::slow(Gait::Trot);
        let c = p.contacts();
        assert_eq!(c.len(), 90);
        for row in &c {
            assert_eq!(row[0], row[3]);
            assert_eq!(row[1], row[2]);
        }
        let stance: usize = c[..30].iter().filter(|r| r[0]).count();
        assert_eq!(stance, 18);
        assert_eq!("bound".parse::<Gait>().unwrap(), Gait::Bound);
        assert!("gallop".parse::<Gait>().is_err());
    }

    #[test]
    fn gait_feet_planted_and_lifted() {
        let model = QuadrupedDims::default().model();
        let p = GaitParams::slow(Gait::Walk);
        let m = gait_motion(&model, &p).unwrap();
        let c = m.contacts.as_ref().unwrap();
        for i in 1..m.num_frames() {
            for leg in 0..4 {
                let f = m.foot(i, leg);
                if c[i][leg] {
                    assert!(f.z.abs() < 1e-7);
                    if c[i - 1][leg] {
                        assert!((f - m.foot(i - 1, leg)).norm() < 1e-7);
                    }
                } else {
                    assert!(f.z > 0.01);
                }
            }
        }
    }

    #[test]
    fn hop_is_ballistic_in_the_air() {
        let model = QuadrupedDims::default().model();
        let hp = HopParams::default();
        let m = hop_motion(&model, &hp).unwrap();
        let (first, last) = hp.flight_range();
        let c = m.contacts.as_ref().unwrap();
        assert!(!c[first][0] && !c[last][0] && c[first - 1][0] && c[last + 1][0]);
        let z: Vec<f64> = m.base_pose.as_ref().unwrap().iter().map(|b| b.position.z).collect();
        let dt = 1.0 / hp.fps;
        for i in first..=last {
            assert!((z[i + 1] - 2.0 * z[i] + z[i - 1] + G * dt * dt).abs() < 1e-12);
        }
        assert!((z[first - 1] - hp.takeoff_height()).abs() < 1e-12);
        assert!((z[last + 1] - hp.takeoff_height()).abs() < 1e-9);
    }
}
