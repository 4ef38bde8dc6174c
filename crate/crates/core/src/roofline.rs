//! Operational intensity and the single-ceiling roofline envelope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::types::KernelDescriptor;
use crate::types::Measurement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Memory,
    Compute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub intensity_flops_per_byte: f64,
    pub attainable_ops_s: f64,
    pub bound: Bound,
}

/// Flops (or integer ops) per byte of global memory traffic.
pub fn operational_intensity(d: &KernelDescriptor) -> f64 {
    d.ops_per_element() as f64 / f64::from(d.element_bytes)
}

/// `min(peak, intensity * bw)`. The knee itself counts as compute-bound.
///
/// The side is decided against [`ridge_point`] rather than by comparing
/// `intensity * bw` with `peak`, so `attainable(ridge_point(p, b), p, b)` is
/// exactly `p` despite rounding in the division.
pub fn attainable(intensity: f64, peak: f64, bw: f64) -> RooflinePoint {
    let (attainable_ops_s, bound) = if intensity < ridge_point(peak, bw) {
        ((intensity * bw).min(peak), Bound::Memory)
    } else {
        (peak, Bound::Compute)
    };
    RooflinePoint { intensity_flops_per_byte: intensity, attainable_ops_s, bound }
}

pub fn ridge_point(peak: f64, bw: f64) -> f64 {
    peak / bw
}

/// One roofline point per iteration count, applied to copies of `template`.
pub fn sweep(
    template: &KernelDescriptor,
    iters: &[u32],
    peak: f64,
    bw: f64,
) -> Result<Vec<(KernelDescriptor, RooflinePoint)>> {
    if iters.is_empty() {
        return Err(Error::EmptySweep);
    }
    if iters.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::SweepNotAscending);
    }
    template.validate()?;
    Ok(iters
        .iter()
        .map(|&c| {
            let d = template.with_iters(c);
            (d, attainable(operational_intensity(&d), peak, bw))
        })
        .collect())
}

/// `0, 1, 2, 4, ..., max` (doubling ladder).
pub fn doubling_ladder(max: u32) -> Vec<u32> {
    let mut out = vec![0];
    let mut c = 1u32;
    while c <= max {
        out.push(c);
        c = match c.checked_mul(2) {
            Some(next) => next,
            None => break,
        };
    }
    out
}

pub const SWEEP_CSV_HEADER: &str = "compute_iters,flops_per_byte,ex_time_s,gops,gbps";

/// Mixbench-style rows: GOPS and GB/s columns are in units of 1e9.
pub fn sweep_csv(measurements: &[Measurement]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for m in measurements {
        out.push_str(&format!(
            "{},{:.3},{:e},{:.3},{:.3}\n",
            m.descriptor.compute_iters,
            operational_intensity(&m.descriptor),
            m.exec_time_s,
            m.ops_per_sec / crate::GIGA,
            m.bytes_per_sec / crate::GIGA,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{FmaMode, Precision};
    use proptest::prelude::*;

    /// Counts ops by stepping through the kernel loop one iteration at a time.
    fn loop_count_oracle(d: &KernelDescriptor) -> f64 {
        let mut ops = 0u64;
        for _ in 0..d.compute_iters {
            ops += u64::from(d.flops_per_iter);
        }
        ops += u64::from(d.extra_flops);
        ops as f64 / f64::from(d.element_bytes)
    }

    #[test]
    fn intensity_examples() {
        let fp32 = KernelDescriptor::new(Precision::Fp32, 1024, FmaMode::Fused);
        assert_eq!(operational_intensity(&fp32), 512.25);
        assert_eq!(operational_intensity(&fp32.with_iters(0)), 0.25);

        let fp64 = KernelDescriptor::new(Precision::Fp64, 1024, FmaMode::Fused);
        let oracle = loop_count_oracle(&fp64);
        assert_eq!(oracle, 256.125);
        assert_eq!(operational_intensity(&fp64), oracle);
    }

    #[test]
    fn attainable_examples() {
        let (peak, bw) = (12.63e12, 1493e9);
        let low = attainable(0.25, peak, bw);
        assert_eq!(low.bound, Bound::Memory);
        assert!((low.attainable_ops_s - 373.25e9).abs() < 1e-3);
        let high = attainable(512.25, peak, bw);
        assert_eq!(high.bound, Bound::Compute);
        assert_eq!(high.attainable_ops_s, peak);
        let knee = attainable(ridge_point(peak, bw), peak, bw);
        assert_eq!(knee.bound, Bound::Compute);
        assert_eq!(knee.attainable_ops_s, peak);
    }

    #[test]
    fn ridge_examples() {
        assert!((ridge_point(12.63e12, 1493e9) - 8.459).abs() < 5e-4);
        assert_eq!(ridge_point(7.0, 7.0), 1.0);
        assert_eq!(ridge_point(50.53e12, 1493e9), 50.53e12 / 1493e9);
        assert!((ridge_point(50.53e12, 1493e9) - 33.85).abs() < 0.01);
    }

    #[test]
    fn sweep_examples() {
        let t = KernelDescriptor::new(Precision::Fp32, 0, FmaMode::Fused);
        let pts = sweep(&t, &[0, 1, 1024], 12.63e12, 1493e9).unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts.windows(2).all(|w| w[0].1.intensity_flops_per_byte < w[1].1.intensity_flops_per_byte));

        assert_eq!(sweep(&t, &[7], 1.0, 1.0).unwrap().len(), 1);
        assert!(matches!(sweep(&t, &[4, 2], 1.0, 1.0), Err(Error::SweepNotAscending)));
        assert!(matches!(sweep(&t, &[2, 2], 1.0, 1.0), Err(Error::SweepNotAscending)));
        assert!(matches!(sweep(&t, &[], 1.0, 1.0), Err(Error::EmptySweep)));

        let ladder = doubling_ladder(1024);
        assert_eq!(ladder.len(), 12);
        for (d, p) in sweep(&t, &ladder, 12.63e12, 1493e9).unwrap() {
            let c = f64::from(d.compute_iters);
            assert_eq!(p.intensity_flops_per_byte, (2.0 * c + 1.0) / 4.0);
        }
    }

    proptest! {
        #[test]
        fn intensity_is_linear_in_iters(c in 0u32..100_000, fpi in 1u32..8, extra in 0u32..4, eb in 1u32..16) {
            let mut d = KernelDescriptor::new(Precision::Fp32, c, FmaMode::Fused);
            d.flops_per_iter = fpi;
            d.extra_flops = extra;
            d.element_bytes = eb;
            let next = operational_intensity(&d.with_iters(c + 1)) - operational_intensity(&d);
            prop_assert!((next - f64::from(fpi) / f64::from(eb)).abs() < 1e-9);
        }
    }
}
