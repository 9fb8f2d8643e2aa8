//! Pose-stream transfer: mapping tracked poses to the shared flange frame and
//! resampling heterogeneous streams onto a common uniform timeline.

use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::{self, GeometryError, RigidTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("stream and width spans do not overlap")]
    EmptyOverlap,
    #[error("timestamps are not strictly increasing at index {0}")]
    NonMonotonicTimestamps(usize),
    #[error("stream too short: need at least 2 samples")]
    StreamTooShort,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Source of a tracked pose stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseSource {
    /// Motion-capture precision mode, 240 Hz.
    Mocap240Hz,
    /// Portable VR mode, 100 Hz.
    Vr100Hz,
}

/// One timestamped tracked pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub timestamp: f64,
    pub pose: RigidTransform,
    pub source: PoseSource,
}

/// Which arm a trajectory drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Left,
    Right,
}

/// One resampled flange-frame sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlangeSample {
    pub timestamp: f64,
    pub pose: RigidTransform,
    pub gripper_width: f64,
}

/// A uniform-rate flange trajectory for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct FlangeTrajectory {
    pub rate: f64,
    pub arm: Arm,
    pub samples: Vec<FlangeSample>,
}

/// Map a tracked pose to the flange frame via the fixed CAD offset.
pub fn to_flange(tracked: &PoseSample, offset: &RigidTransform) -> RigidTransform {
    geometry::compose(&tracked.pose, offset)
}

fn check_monotonic(times: &[f64]) -> Result<(), TransferError> {
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            return Err(TransferError::NonMonotonicTimestamps(i));
        }
    }
    Ok(())
}

/// Resample a pose stream plus a gripper-width channel onto a uniform
/// timeline at `target_rate`, over the overlap of the two spans. Poses are
/// interpolated along the rotation geodesic, widths linearly; never
/// extrapolated.
pub fn resample(
    stream: &[PoseSample],
    widths: &[(f64, f64)],
    target_rate: f64,
    arm: Arm,
) -> Result<FlangeTrajectory, TransferError> {
    if stream.len() < 2 || widths.len() < 2 {
        return Err(TransferError::StreamTooShort);
    }
    let stream_times: Vec<f64> = stream.iter().map(|s| s.timestamp).collect();
    let width_times: Vec<f64> = widths.iter().map(|w| w.0).collect();
    check_monotonic(&stream_times)?;
    check_monotonic(&width_times)?;

    let t0 = stream_times[0].max(width_times[0]);
    let t1 = stream_times[stream_times.len() - 1].min(width_times[width_times.len() - 1]);
    if t1 < t0 {
        return Err(TransferError::EmptyOverlap);
    }
    let dt = 1.0 / target_rate;
    // The epsilon keeps exact-span counts stable against product roundoff.
    let count = libm::floor((t1 - t0) * target_rate + 1e-9) as usize + 1;

    let mut samples = Vec::with_capacity(count);
    let mut pose_hi = 1usize;
    let mut width_hi = 1usize;
    for k in 0..count {
        let t = t0 + k as f64 * dt;
        while pose_hi + 1 < stream.len() && stream_times[pose_hi] < t {
            pose_hi += 1;
        }
        while width_hi + 1 < widths.len() && width_times[width_hi] < t {
            width_hi += 1;
        }
        let (pa, pb) = (&stream[pose_hi - 1], &stream[pose_hi]);
        let s = ((t - pa.timestamp) / (pb.timestamp - pa.timestamp)).clamp(0.0, 1.0);
        let pose = geometry::interpolate_pose(&pa.pose, &pb.pose, s)?;
        let (wa, wb) = (widths[width_hi - 1], widths[width_hi]);
        let sw = ((t - wa.0) / (wb.0 - wa.0)).clamp(0.0, 1.0);
        let width = wa.1 * (1.0 - sw) + wb.1 * sw;
        samples.push(FlangeSample {
            timestamp: t,
            pose,
            gripper_width: width,
        });
    }
    Ok(FlangeTrajectory {
        rate: target_rate,
        arm,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_stream(pose: RigidTransform, rate: f64, n: usize) -> Vec<PoseSample> {
        (0..n)
            .map(|k| PoseSample {
                timestamp: k as f64 / rate,
                pose,
                source: PoseSource::Mocap240Hz,
            })
            .collect()
    }

    fn unit_widths(rate: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|k| (k as f64 / rate, 0.02)).collect()
    }

    #[test]
    fn to_flange_cases() {
        let tracked = PoseSample {
            timestamp: 0.0,
            pose: RigidTransform::identity(),
            source: PoseSource::Vr100Hz,
        };
        assert!(
            to_flange(&tracked, &RigidTransform::identity())
                .max_abs_diff(&RigidTransform::identity())
                < 1e-15
        );
        let offset = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -0.05));
        let f = to_flange(&tracked, &offset);
        assert!((f.translation - Vector3::new(0.0, 0.0, -0.05)).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = crate::geometry::tests::random_transform(&mut rng);
            let b = crate::geometry::tests::random_transform(&mut rng);
            let sample = PoseSample {
                timestamp: 0.0,
                pose: a,
                source: PoseSource::Vr100Hz,
            };
            assert!(to_flange(&sample, &b).max_abs_diff(&crate::geometry::compose(&a, &b)) < 1e-12);
        }
    }

    #[test]
    fn resample_constant_stream() {
        let pose = RigidTransform::from_translation(Vector3::new(0.1, 0.2, 0.3));
        let stream = constant_stream(pose, 240.0, 241);
        let widths = unit_widths(240.0, 241);
        let traj = resample(&stream, &widths, 30.0, Arm::Left).unwrap();
        assert_eq!(traj.samples.len(), 31);
        for s in &traj.samples {
            assert!(s.pose.max_abs_diff(&pose) < 1e-12);
            assert!((s.gripper_width - 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_linear_translation_exact() {
        let v = 0.1; // m/s
        let stream: Vec<PoseSample> = (0..241)
            .map(|k| {
                let t = k as f64 / 240.0;
                PoseSample {
                    timestamp: t,
                    pose: RigidTransform::from_translation(Vector3::new(v * t, 0.0, 0.0)),
                    source: PoseSource::Mocap240Hz,
                }
            })
            .collect();
        let widths = unit_widths(240.0, 241);
        for rate in [17.0, 30.0, 100.0] {
            let traj = resample(&stream, &widths, rate, Arm::Right).unwrap();
            for s in &traj.samples {
                assert!((s.pose.translation.x - v * s.timestamp).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn resample_sinusoid_within_interpolation_bound() {
        let freq = 1.5; // Hz
        let amp = 0.05; // m
        let src_rate = 240.0;
        let stream: Vec<PoseSample> = (0..241)
            .map(|k| {
                let t = k as f64 / src_rate;
                PoseSample {
                    timestamp: t,
                    pose: RigidTransform::from_translation(Vector3::new(
                        amp * (2.0 * core::f64::consts::PI * freq * t).sin(),
                        0.0,
                        0.0,
                    )),
                    source: PoseSource::Mocap240Hz,
                }
            })
            .collect();
        let widths = unit_widths(240.0, 241);
        let traj = resample(&stream, &widths, 30.0, Arm::Left).unwrap();
        let omega = 2.0 * core::f64::consts::PI * freq;
        let bound = omega * omega * amp * (1.0 / src_rate) * (1.0 / src_rate) / 8.0;
        for s in &traj.samples {
            let truth = amp * (omega * s.timestamp).sin();
            assert!((s.pose.translation.x - truth).abs() <= bound * 1.0001);
        }
    }

    #[test]
    fn resample_at_source_rate_reproduces_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stream: Vec<PoseSample> = (0..30)
            .map(|k| PoseSample {
                timestamp: k as f64 / 100.0,
                pose: crate::geometry::tests::random_transform(&mut rng),
                source: PoseSource::Vr100Hz,
            })
            .collect();
        let widths: Vec<(f64, f64)> = (0..30).map(|k| (k as f64 / 100.0, 0.001 * k as f64)).collect();
        let traj = resample(&stream, &widths, 100.0, Arm::Left).unwrap();
        assert_eq!(traj.samples.len(), 30);
        for (out, src) in traj.samples.iter().zip(&stream) {
            assert!(out.pose.max_abs_diff(&src.pose) < 1e-12);
        }
    }

    #[test]
    fn resample_errors() {
        let pose = RigidTransform::identity();
        let stream = constant_stream(pose, 240.0, 10);
        let disjoint: Vec<(f64, f64)> = (0..10).map(|k| (100.0 + k as f64, 0.0)).collect();
        assert!(matches!(
            resample(&stream, &disjoint, 30.0, Arm::Left),
            Err(TransferError::EmptyOverlap)
        ));
        let mut bad = constant_stream(pose, 240.0, 10);
        bad[5].timestamp = bad[4].timestamp;
        assert!(matches!(
            resample(&bad, &unit_widths(240.0, 10), 30.0, Arm::Left),
            Err(TransferError::NonMonotonicTimestamps(5))
        ));
        assert!(matches!(
            resample(&stream[..1], &unit_widths(240.0, 10), 30.0, Arm::Left),
            Err(TransferError::StreamTooShort)
        ));
    }

    #[test]
    fn sample_count_formula() {
        let stream = constant_stream(RigidTransform::identity(), 240.0, 241); // 1 s span
        let widths = unit_widths(240.0, 241);
        for rate in [7.0, 30.0, 240.0] {
            let traj = resample(&stream, &widths, rate, Arm::Left).unwrap();
            let expect = libm::floor(1.0 * rate) as usize + 1;
            assert_eq!(traj.samples.len(), expect);
        }
    }
}
