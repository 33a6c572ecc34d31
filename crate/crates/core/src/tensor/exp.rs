//! Branch-free `exp` over slices of non-positive arguments, written so the
//! loop vectorizes. Wider instruction sets are picked at runtime; every path
//! performs the same operations in the same order, so results agree bitwise.

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
/// Adding this rounds to an integer held in the low mantissa bits.
const ROUND: f64 = 6_755_399_441_055_744.0;
/// Below this the result is reported as 0.
const CUTOFF: f64 = -708.0;

/// 1/k! for k = 0..=12.
const COEFFS: [f64; 13] = [
    1.0,
    1.0,
    0.5,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362_880.0,
    1.0 / 3_628_800.0,
    1.0 / 39_916_800.0,
    1.0 / 479_001_600.0,
];

#[inline(always)]
fn exp_one(x: f64) -> f64 {
    let clamped = x.max(CUTOFF);
    let t = clamped * LOG2E + ROUND;
    let n = t - ROUND;
    let r = clamped - n * LN2_HI - n * LN2_LO;
    let mut p = COEFFS[12];
    for c in COEFFS[..12].iter().rev() {
        p = p * r + c;
    }
    let k = t.to_bits().wrapping_sub(ROUND.to_bits());
    let scale = f64::from_bits(k.wrapping_add(1023) << 52);
    if x < CUTOFF {
        0.0
    } else {
        p * scale
    }
}

#[inline(always)]
fn shifted_loop(xs: &mut [f64], inv_tau: f64) {
    for x in xs.iter_mut() {
        *x = exp_one((*x - 1.0) * inv_tau);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn shifted_avx512(xs: &mut [f64], inv_tau: f64) {
    shifted_loop(xs, inv_tau)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn shifted_avx2(xs: &mut [f64], inv_tau: f64) {
    shifted_loop(xs, inv_tau)
}

/// `x <- exp((x - 1) * inv_tau)` for `x <= 1`, the shifted exponential of
/// a cosine logit. Accurate to a few ulp; arguments below -708 give 0.
pub(crate) fn exp_shifted_in_place(xs: &mut [f64], inv_tau: f64) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { shifted_avx512(xs, inv_tau) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { shifted_avx2(xs, inv_tau) };
        }
    }
    shifted_loop(xs, inv_tau)
}

/// Sum with eight independent accumulators.
pub(crate) fn lane_sum(xs: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let chunks = xs.chunks_exact(8);
    let tail: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    acc.iter().sum::<f64>() + tail
}
