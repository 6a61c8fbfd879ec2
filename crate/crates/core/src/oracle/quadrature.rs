//! Globally adaptive Gauss–Kronrod (7/15) integration of vector-valued
//! integrands.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights for the nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral<const N: usize> {
    pub value: [f64; N],
    /// Sum over subintervals of `|K15 − G7|`, maximized over components.
    pub error: f64,
    pub evaluations: usize,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: f64,
}

fn gk15<const N: usize, F>(f: &mut F, a: f64, b: f64) -> Result<Segment<N>>
where
    F: FnMut(f64) -> [f64; N],
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = [0.0; N];
    let mut gauss = [0.0; N];
    let mut eval = |x: f64| -> Result<[f64; N]> {
        let v = f(x);
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric(format!("integrand is not finite at x = {x}: {v:?}")));
        }
        Ok(v)
    };
    let fc = eval(center)?;
    for c in 0..N {
        kronrod[c] = WGK[7] * fc[c];
        gauss[c] = WG[3] * fc[c];
    }
    for k in 0..7 {
        let dx = half * XGK[k];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        for c in 0..N {
            let s = f1[c] + f2[c];
            kronrod[c] += WGK[k] * s;
            if k % 2 == 1 {
                gauss[c] += WG[k / 2] * s;
            }
        }
    }
    let mut error: f64 = 0.0;
    let mut value = [0.0; N];
    for c in 0..N {
        value[c] = kronrod[c] * half;
        error = error.max(((kronrod[c] - gauss[c]) * half).abs());
    }
    Ok(Segment { a, b, value, error })
}

/// Integrates `f` over the union of `[points[i], points[i+1]]` until the
/// summed error estimate is below `abs_tol`.
///
/// `points` must be sorted; interior entries are known kinks of the
/// integrand and are never straddled by a rule.
pub fn integrate_pieces<const N: usize, F>(
    mut f: F,
    points: &[f64],
    abs_tol: f64,
    max_intervals: usize,
) -> Result<Integral<N>>
where
    F: FnMut(f64) -> [f64; N],
{
    if points.len() < 2 {
        return Err(Error::Numeric("integration needs at least two break points".into()));
    }
    // Negated so that NaN break points are rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if points.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Numeric(format!("break points not sorted: {points:?}")));
    }
    let mut segments: Vec<Segment<N>> = Vec::new();
    for w in points.windows(2) {
        if w[1] > w[0] {
            segments.push(gk15(&mut f, w[0], w[1])?);
        }
    }
    let mut evaluations = 15 * segments.len();
    loop {
        let total_error: f64 = segments.iter().map(|s| s.error).sum();
        if total_error <= abs_tol || segments.is_empty() {
            break;
        }
        if segments.len() >= max_intervals {
            return Err(Error::Numeric(format!(
                "no convergence on [{}, {}] after {} subintervals: error estimate {:.3e} > {:.3e}",
                points[0],
                points[points.len() - 1],
                segments.len(),
                total_error,
                abs_tol
            )));
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .unwrap();
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b) {
            return Err(Error::Numeric(format!(
                "subinterval [{}, {}] cannot be bisected further (error {:.3e})",
                seg.a, seg.b, seg.error
            )));
        }
        segments.push(gk15(&mut f, seg.a, mid)?);
        segments.push(gk15(&mut f, mid, seg.b)?);
        evaluations += 30;
    }
    let mut value = [0.0; N];
    // Sum in interval order for reproducibility.
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    for s in &segments {
        for (v, x) in value.iter_mut().zip(s.value) {
            *v += x;
        }
    }
    Ok(Integral {
        value,
        error: segments.iter().map(|s| s.error).sum(),
        evaluations,
        intervals: segments.len(),
    })
}

pub fn integrate<const N: usize, F>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<Integral<N>>
where
    F: FnMut(f64) -> [f64; N],
{
    integrate_pieces(f, &[a, b], abs_tol, 4096)
}
