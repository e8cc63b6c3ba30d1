//! Branch-free sine and cosine over slices.
//!
//! The activations dominate training time; a straight-line kernel lets the
//! compiler vectorize it, unlike the scalar libm call. Argument reduction is
//! Cody-Waite with a three-part pi/2, and the polynomials are the fdlibm
//! kernels, giving errors of a few ulp for |x| below `FAST_LIMIT`.

/// Arguments beyond this fall back to the standard library.
const FAST_LIMIT: f64 = 1e5;

/// Elements per fixed-size block handed to the vectorizer.
const LANES: usize = 8;

const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;
const PIO2_1: f64 = 1.570_796_326_734_125_614_17e+00;
const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
const PIO2_3: f64 = 2.022_266_248_711_166_455_80e-21;
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52

const S1: f64 = -1.666_666_666_666_663_243_48e-01;
const S2: f64 = 8.333_333_333_322_489_461_24e-03;
const S3: f64 = -1.984_126_982_985_794_931_34e-04;
const S4: f64 = 2.755_731_370_707_006_767_89e-06;
const S5: f64 = -2.505_076_025_340_686_341_95e-08;
const S6: f64 = 1.589_690_995_211_550_102_21e-10;

const C1: f64 = 4.166_666_666_666_660_190_37e-02;
const C2: f64 = -1.388_888_888_887_410_957_49e-03;
const C3: f64 = 2.480_158_728_947_672_941_78e-05;
const C4: f64 = -2.755_731_435_139_066_330_35e-07;
const C5: f64 = 2.087_572_321_298_174_827_90e-09;
const C6: f64 = -1.135_964_755_778_819_482_65e-11;

#[inline(always)]
fn kernel(x: f64) -> (f64, f64) {
    // The rounded quotient lands in the low mantissa bits of `t`, so the
    // quadrant is read with integer ops and no float-to-int conversion.
    let t = x * FRAC_2_PI + ROUND_MAGIC;
    let q = t.to_bits();
    let qf = t - ROUND_MAGIC;
    let r = ((x - qf * PIO2_1) - qf * PIO2_2) - qf * PIO2_3;
    let z = r * r;
    let s = r + r * z * (S1 + z * (S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)))));
    let c = 1.0 - 0.5 * z + z * z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))));
    let swap = 0u64.wrapping_sub(q & 1);
    let (sb, cb) = (s.to_bits(), c.to_bits());
    let s = (sb & !swap) | (cb & swap);
    let c = (cb & !swap) | (sb & swap);
    (
        f64::from_bits(s ^ ((q & 2) << 62)),
        f64::from_bits(c ^ ((q.wrapping_add(1) & 2) << 62)),
    )
}

/// `sin(scale * x)` and `cos(scale * x)` for every element of `x`.
pub(crate) fn sin_cos_scaled(scale: f64, x: &[f64], sin: &mut [f64], cos: &mut [f64]) {
    assert!(x.len() == sin.len() && x.len() == cos.len());
    let fast = x.iter().all(|&v| (scale * v).abs() < FAST_LIMIT);
    if fast {
        for ((xs, ss), cs) in x
            .chunks(LANES)
            .zip(sin.chunks_mut(LANES))
            .zip(cos.chunks_mut(LANES))
        {
            if xs.len() == LANES {
                let mut sv = [0.0; LANES];
                let mut cv = [0.0; LANES];
                for l in 0..LANES {
                    (sv[l], cv[l]) = kernel(scale * xs[l]);
                }
                ss.copy_from_slice(&sv);
                cs.copy_from_slice(&cv);
            } else {
                for l in 0..xs.len() {
                    (ss[l], cs[l]) = kernel(scale * xs[l]);
                }
            }
        }
    } else {
        for ((&v, s), c) in x.iter().zip(sin.iter_mut()).zip(cos.iter_mut()) {
            (*s, *c) = (scale * v).sin_cos();
        }
    }
}
