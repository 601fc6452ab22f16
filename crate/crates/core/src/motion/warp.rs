use super::{BasePose, Keypoints, Motion, NUM_KEYPOINTS};
use crate::error::{Error, Result};

/// Piecewise time-scale factors. The source motion is split into
/// `alphas.len()` equal intervals and interval `s` is played `alphas[s]`
/// times slower (α > 1 lengthens it).
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalParams {
    pub alphas: Vec<f64>,
    pub bounds: (f64, f64),
}

impl TemporalParams {
    /// Default bounds: log2(α) ∈ [−1, 1].
    pub const DEFAULT_BOUNDS: (f64, f64) = (0.5, 2.0);

    pub fn new(alphas: Vec<f64>, bounds: (f64, f64)) -> Result<Self> {
        let params = Self { alphas, bounds };
        params.validate()?;
        Ok(params)
    }

    pub fn identity(segments: usize) -> Self {
        Self {
            alphas: vec![1.0; segments.max(1)],
            bounds: Self::DEFAULT_BOUNDS,
        }
    }

    pub fn segment_count(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid("bounds", None, format!("invalid bounds ({lo}, {hi})")));
        }
        if self.alphas.is_empty() {
            return Err(Error::invalid("alphas", None, "need at least one segment"));
        }
        for &a in &self.alphas {
            if !(a >= lo && a <= hi) {
                return Err(Error::OutOfRange {
                    what: "temporal parameter",
                    value: a,
                    min: lo,
                    max: hi,
                });
            }
        }
        Ok(())
    }

    /// Control-time duration of a warped motion whose source lasts `duration`.
    pub fn warped_duration(&self, duration: f64) -> f64 {
        duration / self.segment_count() as f64 * self.alphas.iter().sum::<f64>()
    }
}

/// Maps control time `t` to source time: piecewise linear, monotone,
/// `s(0) = 0` and `s(T_α) = duration`.
pub fn deform_time(t: f64, params: &TemporalParams, duration: f64) -> Result<f64> {
    let total = params.warped_duration(duration);
    let slack = 1e-12 * total.max(1.0);
    if !(t >= -slack && t <= total + slack) {
        return Err(Error::OutOfRange {
            what: "control time",
            value: t,
            min: 0.0,
            max: total,
        });
    }
    let t = t.clamp(0.0, total);
    let seg_src = duration / params.segment_count() as f64;
    let mut start = 0.0;
    for (k, &alpha) in params.alphas.iter().enumerate() {
        let len = seg_src * alpha;
        let last = k + 1 == params.segment_count();
        if t < start + len || last {
            let s = k as f64 * seg_src + (t - start) / alpha;
            return Ok(s.min(duration));
        }
        start += len;
    }
    unreachable!("segment loop always returns on the last segment")
}

/// Splits source time into a bracketing frame index and blend weight.
/// Times that land on a frame instant return weight exactly zero.
fn bracket(t_src: f64, motion: &Motion) -> Result<(usize, f64)> {
    let duration = motion.duration();
    let slack = 1e-9 / motion.fps;
    if !(t_src >= -slack && t_src <= duration + slack) {
        return Err(Error::OutOfRange {
            what: "source time",
            value: t_src,
            min: 0.0,
            max: duration,
        });
    }
    let last = motion.num_frames() - 1;
    let u = (t_src * motion.fps).clamp(0.0, last as f64);
    let nearest = u.round();
    if (u - nearest).abs() < 1e-9 {
        return Ok((nearest as usize, 0.0));
    }
    let i = (u.floor() as usize).min(last - 1);
    Ok((i, u - i as f64))
}

pub fn interp_keypoints(t_src: f64, motion: &Motion) -> Result<Keypoints> {
    let (i, w) = bracket(t_src, motion)?;
    if w == 0.0 {
        return Ok(motion.keypoints[i]);
    }
    let (a, b) = (&motion.keypoints[i], &motion.keypoints[i + 1]);
    let mut out = *a;
    for j in 0..NUM_KEYPOINTS {
        out[j] = a[j] + (b[j] - a[j]) * w;
    }
    Ok(out)
}

/// Base pose at source time: positions interpolate linearly, orientations by slerp.
pub fn interp_base_pose(t_src: f64, motion: &Motion) -> Result<BasePose> {
    let poses = motion
        .base_pose
        .as_ref()
        .ok_or_else(|| Error::invalid("base_pose", None, "motion has no base pose"))?;
    let (i, w) = bracket(t_src, motion)?;
    if w == 0.0 {
        return Ok(poses[i]);
    }
    let (a, b) = (&poses[i], &poses[i + 1]);
    Ok(BasePose {
        position: a.position + (b.position - a.position) * w,
        orientation: a.orientation.slerp(&b.orientation, w),
    })
}
