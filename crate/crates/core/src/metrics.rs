//! Evaluation metrics for retargeted motions.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::motion::{ContactFlags, Motion, NUM_FEET, NUM_KEYPOINTS};

/// Minimum contact-segment duration considered by [`foot_slide`].
pub const MIN_SLIDE_SEGMENT_S: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TravelAxis {
    Longitudinal,
    Lateral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwResult {
    /// Mean per-frame keypoint L1 distance along the optimal warping path (mm).
    pub l1_mm: f64,
    pub path_len: usize,
}

fn frame_l1(a: &[Vector3<f64>; NUM_KEYPOINTS], b: &[Vector3<f64>; NUM_KEYPOINTS]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs().sum()).sum::<f64>() / NUM_KEYPOINTS as f64
}

/// Classic DTW over frames with per-frame cost equal to the mean keypoint
/// L1 distance. Ties in accumulated cost are broken towards the shorter
/// path, which keeps the result symmetric in its arguments.
pub fn dtw_keypoint_l1(a: &Motion, b: &Motion) -> Result<DtwResult> {
    let (n, m) = (a.num_frames(), b.num_frames());
    if n == 0 || m == 0 {
        return Err(Error::invalid("frames", None, "DTW of an empty motion"));
    }
    let mut acc = vec![(f64::INFINITY, usize::MAX); (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    acc[0] = (0.0, 0);
    for i in 1..=n {
        for j in 1..=m {
            let cost = frame_l1(&a.keypoints[i - 1], &b.keypoints[j - 1]);
            let best = [acc[idx(i - 1, j - 1)], acc[idx(i - 1, j)], acc[idx(i, j - 1)]]
                .into_iter()
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
                .unwrap();
            acc[idx(i, j)] = (best.0 + cost, best.1 + 1);
        }
    }
    let (total, len) = acc[idx(n, m)];
    Ok(DtwResult {
        l1_mm: total / len as f64 * 1000.0,
        path_len: len,
    })
}

/// Path length (m) of the keypoint centroid, used to normalize DTW error.
pub fn trajectory_length(motion: &Motion) -> f64 {
    let centroid = |kp: &[Vector3<f64>; NUM_KEYPOINTS]| kp.iter().sum::<Vector3<f64>>() / NUM_KEYPOINTS as f64;
    motion
        .keypoints
        .windows(2)
        .map(|w| (centroid(&w[1]) - centroid(&w[0])).norm())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FootSlide {
    /// Mean start-to-end L1 displacement (mm) per foot; `None` when the foot
    /// has no qualifying contact segment.
    pub per_foot: [Option<f64>; NUM_FEET],
}

impl FootSlide {
    pub fn mean(&self) -> Option<f64> {
        let vals: Vec<f64> = self.per_foot.iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn max(&self) -> Option<f64> {
        self.per_foot.iter().flatten().copied().reduce(f64::max)
    }
}

/// Contiguous `true` runs of one foot's schedule as inclusive frame ranges.
pub fn contact_segments(contacts: &[ContactFlags], leg: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in contacts.iter().enumerate() {
        match (c[leg], start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, contacts.len() - 1));
    }
    out
}

/// Foot sliding: L1 distance between the foot position at the start and end
/// of every contact segment lasting at least `min_segment_s`.
pub fn foot_slide(motion: &Motion, contacts: &[ContactFlags], min_segment_s: f64) -> Result<FootSlide> {
    if contacts.len() != motion.num_frames() {
        return Err(Error::Dimension(format!(
            "{} contact frames for {} motion frames",
            contacts.len(),
            motion.num_frames()
        )));
    }
    let mut out = FootSlide::default();
    for leg in 0..NUM_FEET {
        let slides: Vec<f64> = contact_segments(contacts, leg)
            .into_iter()
            .filter(|&(s, e)| (e - s) as f64 / motion.fps >= min_segment_s - 1e-9)
            .map(|(s, e)| (motion.foot(e, leg) - motion.foot(s, leg)).abs().sum() * 1000.0)
            .collect();
        if !slides.is_empty() {
            out.per_foot[leg] = Some(slides.iter().sum::<f64>() / slides.len() as f64);
        }
    }
    Ok(out)
}

/// Nearest-frame resampling of a schedule to `len` frames.
pub fn resample_contacts(contacts: &[ContactFlags], len: usize) -> Vec<ContactFlags> {
    if contacts.len() == len || contacts.is_empty() {
        return contacts.to_vec();
    }
    let scale = (contacts.len() - 1) as f64 / (len.max(2) - 1) as f64;
    (0..len)
        .map(|i| contacts[((i as f64 * scale).round() as usize).min(contacts.len() - 1)])
        .collect()
}

/// Intersection over union of the `true` cells of two schedules. The shorter
/// schedule is resampled onto the longer one; two all-false schedules give 1.
pub fn contact_iou(a: &[ContactFlags], b: &[ContactFlags]) -> f64 {
    let len = a.len().max(b.len());
    let (a, b) = (resample_contacts(a, len), resample_contacts(b, len));
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(&b) {
        for leg in 0..NUM_FEET {
            inter += (x[leg] && y[leg]) as usize;
            union += (x[leg] || y[leg]) as usize;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Signed base displacement (m) between first and last frame, measured along
/// `axis` of the initial heading.
pub fn travel_distance(motion: &Motion, axis: TravelAxis) -> Result<f64> {
    let poses = motion
        .base_pose
        .as_ref()
        .ok_or_else(|| Error::invalid("base_pose", None, "travel distance needs a base trajectory"))?;
    let (first, last) = (poses[0], poses[poses.len() - 1]);
    let (_, _, yaw) = first.orientation.euler_angles();
    let dir = match axis {
        TravelAxis::Longitudinal => Vector3::new(yaw.cos(), yaw.sin(), 0.0),
        TravelAxis::Lateral => Vector3::new(-yaw.sin(), yaw.cos(), 0.0),
    };
    Ok((last.position - first.position).dot(&dir))
}

pub fn recovery_rate(original: &Motion, reconstructed: &Motion, axis: TravelAxis) -> Result<f64> {
    let reference = travel_distance(original, axis)?;
    if reference.abs() < 1e-3 {
        return Err(Error::OutOfRange {
            what: "original travel distance (m)",
            value: reference,
            min: 1e-3,
            max: f64::INFINITY,
        });
    }
    Ok(100.0 * travel_distance(reconstructed, axis)? / reference)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub motion: String,
    pub robot: String,
    pub method: String,
    pub dtw_l1_mm: f64,
    pub dtw_normalized_pct: Option<f64>,
    pub foot_slide_mm: [Option<f64>; NUM_FEET],
    pub foot_slide_mean_mm: Option<f64>,
    pub contact_iou: f64,
    pub travel_distance_m: Option<f64>,
    pub recovery_rate_pct: Option<f64>,
}

impl MetricsReport {
    /// Compares `result` against `reference`. Foot slide is measured over
    /// the schedule `result` was generated with; IoU compares the reference
    /// schedule with `recomputed`, the contacts detected on `result`.
    pub fn evaluate(
        labels: (&str, &str, &str),
        reference: &Motion,
        reference_contacts: &[ContactFlags],
        result: &Motion,
        result_contacts: &[ContactFlags],
        recomputed: &[ContactFlags],
    ) -> Result<Self> {
        let dtw = dtw_keypoint_l1(reference, result)?;
        let length = trajectory_length(reference);
        let slide = foot_slide(result, result_contacts, MIN_SLIDE_SEGMENT_S)?;
        Ok(Self {
            motion: labels.0.to_string(),
            robot: labels.1.to_string(),
            method: labels.2.to_string(),
            dtw_l1_mm: dtw.l1_mm,
            dtw_normalized_pct: (length > 1e-9).then(|| 100.0 * dtw.l1_mm / 1000.0 / length),
            foot_slide_mm: slide.per_foot,
            foot_slide_mean_mm: slide.mean(),
            contact_iou: contact_iou(reference_contacts, recomputed),
            travel_distance_m: travel_distance(result, TravelAxis::Longitudinal).ok(),
            recovery_rate_pct: None,
        })
    }

    pub const CSV_HEADER: &'static str = "motion,robot,method,dtw_l1_mm,dtw_normalized_pct,foot_slide_fl_mm,foot_slide_fr_mm,foot_slide_rl_mm,foot_slide_rr_mm,foot_slide_mm,contact_iou,travel_distance_m,recovery_rate_pct";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut fields = vec![
            self.motion.clone(),
            self.robot.clone(),
            self.method.clone(),
            format!("{}", self.dtw_l1_mm),
            opt(self.dtw_normalized_pct),
        ];
        fields.extend(self.foot_slide_mm.iter().map(|v| opt(*v)));
        fields.push(opt(self.foot_slide_mean_mm));
        fields.push(format!("{}", self.contact_iou));
        fields.push(opt(self.travel_distance_m));
        fields.push(opt(self.recovery_rate_pct));
        fields.join(",")
    }
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(MetricsReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{BasePose, Keypoints};
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn wave(frames: usize, fps: f64) -> Motion {
        let kps = (0..frames)
            .map(|i| {
                let t = i as f64 / fps;
                std::array::from_fn(|j| Vector3::new((t * 3.0 + j as f64).sin(), t, 0.1 * j as f64))
            })
            .collect();
        Motion::new(fps, kps)
    }

    #[test]
    fn dtw_identity_and_duplication() {
        let a = wave(40, 30.0);
        assert_eq!(dtw_keypoint_l1(&a, &a).unwrap().l1_mm, 0.0);
        let mut slow = a.clone();
        slow.keypoints = a.keypoints.iter().flat_map(|k| [*k, *k]).collect();
        assert_eq!(dtw_keypoint_l1(&a, &slow).unwrap().l1_mm, 0.0);
    }

    #[test]
    fn dtw_constant_offset_l1() {
        let a = wave(30, 30.0);
        let mut b = a.clone();
        for kp in b.keypoints.iter_mut() {
            for p in kp.iter_mut() {
                *p += Vector3::new(0.01, 0.01, 0.01);
            }
        }
        // Offset (10, 10, 10) mm: 30 mm L1 per keypoint.
        let d = dtw_keypoint_l1(&a, &b).unwrap().l1_mm;
        assert!((d - 30.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn dtw_empty_rejected() {
        let a = wave(3, 30.0);
        let empty = Motion::new(30.0, Vec::new());
        assert!(dtw_keypoint_l1(&a, &empty).is_err());
    }

    fn still_foot_motion(frames: usize, fps: f64, drift: impl Fn(usize) -> f64) -> Motion {
        let kps: Vec<Keypoints> = (0..frames)
            .map(|i| std::array::from_fn(|j| Vector3::new(drift(i) * (j >= 12) as u8 as f64, j as f64, 0.0)))
            .collect();
        Motion::new(fps, kps)
    }

    #[test]
    fn foot_slide_cases() {
        let fps = 50.0;
        // 1 s segment (51 frames) drifting 10 mm.
        let m = still_foot_motion(51, fps, |i| 0.01 * i as f64 / 50.0);
        let contacts = vec![[true; 4]; 51];
        let s = foot_slide(&m, &contacts, MIN_SLIDE_SEGMENT_S).unwrap();
        for leg in 0..4 {
            assert!((s.per_foot[leg].unwrap() - 10.0).abs() < 1e-9);
        }

        let anchored = still_foot_motion(51, fps, |_| 0.0);
        assert_eq!(foot_slide(&anchored, &contacts, 0.5).unwrap().mean(), Some(0.0));

        // 0.4 s segment is excluded; no qualifying segment means absent.
        let short = still_foot_motion(21, fps, |i| 0.01 * i as f64);
        let s = foot_slide(&short, &vec![[true; 4]; 21], 0.5).unwrap();
        assert_eq!(s.mean(), None);
    }

    #[test]
    fn iou_counting() {
        let mut a = vec![[false; 4]; 20];
        let mut b = vec![[false; 4]; 20];
        for i in 0..10 {
            a[i][0] = true;
        }
        for i in 5..15 {
            b[i][0] = true;
        }
        assert!((contact_iou(&a, &b) - 5.0 / 15.0).abs() < 1e-15);
        assert_eq!(contact_iou(&a, &a), 1.0);
        let not_a: Vec<ContactFlags> = a.iter().map(|f| f.map(|x| !x)).collect();
        assert_eq!(contact_iou(&a, &not_a), 0.0);
        let empty = vec![[false; 4]; 20];
        assert_eq!(contact_iou(&empty, &empty), 1.0);
    }

    fn with_base(distance: f64) -> Motion {
        let mut m = wave(11, 10.0);
        m.base_pose = Some(
            (0..11)
                .map(|i| BasePose {
                    position: Vector3::new(distance * i as f64 / 10.0, 0.0, 0.3),
                    orientation: UnitQuaternion::identity(),
                })
                .collect(),
        );
        m
    }

    #[test]
    fn recovery_rate_cases() {
        let orig = with_base(2.0);
        assert!((recovery_rate(&orig, &orig, TravelAxis::Longitudinal).unwrap() - 100.0).abs() < 1e-12);
        let half = with_base(1.0);
        assert!((recovery_rate(&orig, &half, TravelAxis::Longitudinal).unwrap() - 50.0).abs() < 1e-12);
        let still = with_base(0.0);
        assert!(recovery_rate(&still, &orig, TravelAxis::Longitudinal).is_err());
    }

    #[test]
    fn travel_measured_in_initial_heading() {
        let mut m = with_base(1.0);
        let yaw = UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        for (i, p) in m.base_pose.as_mut().unwrap().iter_mut().enumerate() {
            p.orientation = yaw;
            p.position = Vector3::new(0.0, i as f64 / 10.0, 0.3);
        }
        assert!((travel_distance(&m, TravelAxis::Longitudinal).unwrap() - 1.0).abs() < 1e-12);
        assert!(travel_distance(&m, TravelAxis::Lateral).unwrap().abs() < 1e-12);
    }

    fn arb_schedule(len: usize) -> impl Strategy<Value = Vec<ContactFlags>> {
        prop::collection::vec(prop::array::uniform4(any::<bool>()), len)
    }

    proptest! {
        #[test]
        fn iou_bounded_and_symmetric(a in arb_schedule(25), b in arb_schedule(25)) {
            let ab = contact_iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, contact_iou(&b, &a));
            prop_assert_eq!(contact_iou(&a, &a), 1.0);
        }

        #[test]
        fn dtw_symmetric(shift in 0usize..5, scale in 0.5f64..2.0) {
            let a = wave(20, 30.0);
            let mut b = wave(20 + shift, 30.0);
            for kp in b.keypoints.iter_mut() {
                for p in kp.iter_mut() { *p *= scale; }
            }
            let ab = dtw_keypoint_l1(&a, &b).unwrap().l1_mm;
            let ba = dtw_keypoint_l1(&b, &a).unwrap().l1_mm;
            prop_assert!((ab - ba).abs() < 1e-9 * (1.0 + ab));
        }

        #[test]
        fn foot_slide_translation_invariant(dx in -5.0f64..5.0, dy in -5.0f64..5.0, dz in -1.0f64..1.0) {
            let m = still_foot_motion(51, 50.0, |i| 0.003 * (i as f64).sqrt());
            let mut moved = m.clone();
            for kp in moved.keypoints.iter_mut() {
                for p in kp.iter_mut() { *p += Vector3::new(dx, dy, dz); }
            }
            let c = vec![[true; 4]; 51];
            let a = foot_slide(&m, &c, 0.5).unwrap().mean().unwrap();
            let b = foot_slide(&moved, &c, 0.5).unwrap().mean().unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
