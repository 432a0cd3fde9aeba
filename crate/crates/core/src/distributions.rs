//! Standard and truncated Gaussian machinery.
//!
//! Everything a chance constraint needs: the standard normal CDF and
//! quantile, the CDF and moments of a Gaussian restricted to `[lower, upper]`,
//! and the offset `d` that turns `Pr(X <= d) >= gamma` into a deterministic
//! bound.
//!
//! A zero standard deviation is a point mass at the mean (clamped into the
//! truncation interval), so dry-weather forecasts with vanishing spread do
//! not need special casing upstream.

use std::f64::consts::FRAC_1_SQRT_2;
use thiserror::Error;

/// Smallest base probability mass accepted on a truncation interval.
pub const MIN_TRUNCATION_MASS: f64 = 1e-12;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("standard deviation must be finite and >= 0, got {0}")]
    InvalidStddev(f64),
    #[error("mean must be finite, got {0}")]
    InvalidMean(f64),
    #[error("truncation bounds must satisfy lower < upper, got [{lower}, {upper}]")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("truncation [{lower}, {upper}] holds base mass {mass:e} < {MIN_TRUNCATION_MASS:e}")]
    DegenerateTruncation { lower: f64, upper: f64, mass: f64 },
    #[error("probability must lie strictly inside (0, 1), got {0}")]
    InvalidProbability(f64),
}

/// A Gaussian described by mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    mean: f64,
    stddev: f64,
}

impl GaussianSpec {
    pub fn new(mean: f64, stddev: f64) -> Result<Self, DistributionError> {
        if !mean.is_finite() {
            return Err(DistributionError::InvalidMean(mean));
        }
        if !stddev.is_finite() || stddev < 0.0 {
            return Err(DistributionError::InvalidStddev(stddev));
        }
        Ok(Self { mean, stddev })
    }

    pub fn standard() -> Self {
        Self { mean: 0.0, stddev: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    pub fn variance(&self) -> f64 {
        self.stddev * self.stddev
    }

    /// Offset `d = mean + stddev * quantile(gamma)`.
    pub fn tightening_offset(&self, gamma: f64) -> Result<f64, DistributionError> {
        let z = std_normal_quantile(gamma)?;
        Ok(self.mean + self.stddev * z)
    }
}

/// A Gaussian restricted and renormalized to `[lower, upper]`.
///
/// Either bound may be infinite. Construction rejects intervals carrying
/// less than [`MIN_TRUNCATION_MASS`] of the base distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussianSpec {
    base: GaussianSpec,
    lower: f64,
    upper: f64,
}

impl TruncatedGaussianSpec {
    pub fn new(base: GaussianSpec, lower: f64, upper: f64) -> Result<Self, DistributionError> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(DistributionError::InvalidBounds { lower, upper });
        }
        let spec = Self { base, lower, upper };
        if base.stddev > 0.0 {
            let mass = spec.base_mass();
            if !(mass >= MIN_TRUNCATION_MASS) {
                return Err(DistributionError::DegenerateTruncation { lower, upper, mass });
            }
        }
        Ok(spec)
    }

    /// No truncation at all.
    pub fn untruncated(base: GaussianSpec) -> Self {
        Self {
            base,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn base(&self) -> GaussianSpec {
        self.base
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_untruncated(&self) -> bool {
        self.lower == f64::NEG_INFINITY && self.upper == f64::INFINITY
    }

    /// Standardized bounds `(alpha, beta)`.
    fn standardized_bounds(&self) -> (f64, f64) {
        let s = self.base.stddev;
        let m = self.base.mean;
        ((self.lower - m) / s, (self.upper - m) / s)
    }

    /// Base probability of `[lower, upper]`.
    pub fn base_mass(&self) -> f64 {
        if self.base.stddev == 0.0 {
            let m = self.base.mean;
            return if m >= self.lower && m <= self.upper { 1.0 } else { 0.0 };
        }
        let (alpha, beta) = self.standardized_bounds();
        std_normal_interval_mass(alpha, beta)
    }

    /// Location of the point mass when the base spread is zero.
    fn point_mass(&self) -> f64 {
        self.base.mean.clamp(self.lower, self.upper)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        truncated_cdf(self, x)
    }

    pub fn moments(&self) -> (f64, f64) {
        truncated_moments(self)
    }

    /// Standardized quantile: the `z` with `mean + stddev * z` equal to
    /// [`Self::quantile`]. Clamped into the standardized bounds.
    pub fn standardized_quantile(&self, p: f64) -> Result<f64, DistributionError> {
        check_probability(p)?;
        if self.base.stddev == 0.0 {
            return Ok(0.0);
        }
        let (alpha, beta) = self.standardized_bounds();
        let z = if alpha > 0.0 {
            // Upper tail: work with survival probabilities to keep precision.
            let sa = std_normal_cdf(-alpha);
            let sb = std_normal_cdf(-beta);
            -std_normal_quantile(sa - p * (sa - sb))?
        } else {
            let fa = std_normal_cdf(alpha);
            let fb = std_normal_cdf(beta);
            std_normal_quantile(p * fb + (1.0 - p) * fa)?
        };
        Ok(z.clamp(alpha, beta))
    }

    pub fn quantile(&self, p: f64) -> Result<f64, DistributionError> {
        if self.base.stddev == 0.0 {
            check_probability(p)?;
            return Ok(self.point_mass());
        }
        let z = self.standardized_quantile(p)?;
        Ok((self.base.mean + self.base.stddev * z).clamp(self.lower, self.upper))
    }

    /// Smallest `d` with `Pr(X <= d) >= gamma`, clamped into the bounds.
    pub fn tightening_offset(&self, gamma: f64) -> Result<f64, DistributionError> {
        self.quantile(gamma)
    }
}

/// Either flavour of uncertain scalar accepted by [`tightening_offset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Uncertain {
    Gaussian(GaussianSpec),
    Truncated(TruncatedGaussianSpec),
}

impl From<GaussianSpec> for Uncertain {
    fn from(value: GaussianSpec) -> Self {
        Uncertain::Gaussian(value)
    }
}

impl From<TruncatedGaussianSpec> for Uncertain {
    fn from(value: TruncatedGaussianSpec) -> Self {
        Uncertain::Truncated(value)
    }
}

fn check_probability(p: f64) -> Result<(), DistributionError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(DistributionError::InvalidProbability(p))
    }
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, `0.5 * erfc(-x / sqrt(2))`.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

// W. J. Cody's rational Chebyshev approximations (CALERF); relative error
// near machine epsilon over the whole real line.
const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const ERFC_C: [f64; 9] = [
    5.641_884_969_886_701e-1,
    8.883_149_794_388_376e0,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const ERFC_D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_099e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_6e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const ERFC_P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const ERFC_Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_467_3e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];
const FRAC_1_SQRT_PI: f64 = 5.641_895_835_477_563e-1;

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.468_75 {
        let ysq = if y > 1.11e-16 { x * x } else { 0.0 };
        let mut num = ERF_A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + ERF_A[i]) * ysq;
            den = (den + ERF_B[i]) * ysq;
        }
        return 1.0 - x * (num + ERF_A[3]) / (den + ERF_B[3]);
    }
    let mut r = if y <= 4.0 {
        let mut num = ERFC_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERFC_C[i]) * y;
            den = (den + ERFC_D[i]) * y;
        }
        (num + ERFC_C[7]) / (den + ERFC_D[7])
    } else if y >= 26.6 {
        0.0
    } else {
        let ysq = 1.0 / (y * y);
        let mut num = ERFC_P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + ERFC_P[i]) * ysq;
            den = (den + ERFC_Q[i]) * ysq;
        }
        let r = ysq * (num + ERFC_P[4]) / (den + ERFC_Q[4]);
        (FRAC_1_SQRT_PI - r) / y
    };
    if y < 26.6 {
        // Split exp(-y^2) to avoid cancellation in y^2.
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        r *= (-ysq * ysq).exp() * (-del).exp();
    }
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

/// `Phi(b) - Phi(a)` evaluated on whichever tail keeps precision.
fn std_normal_interval_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

// Wichura's AS 241 (PPND16) coefficients.
const PPND_A: [f64; 8] = [
    3.387_132_872_796_366_5e0,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_3e3,
    1.373_169_376_550_946e4,
    4.592_195_393_154_987e4,
    6.726_577_092_700_87e4,
    3.343_057_558_358_813e4,
    2.509_080_928_730_122_7e3,
];
const PPND_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e1,
    6.871_870_074_920_579e2,
    5.394_196_021_424_751e3,
    2.121_379_430_158_659_7e4,
    3.930_789_580_009_271e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_854_5e3,
];
const PPND_C: [f64; 8] = [
    1.423_437_110_749_683_6e0,
    4.630_337_846_156_545e0,
    5.769_497_221_460_691e0,
    3.647_848_324_763_204_5e0,
    1.270_458_252_452_368_4e0,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const PPND_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759e0,
    1.676_384_830_183_803_8e0,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const PPND_E: [f64; 8] = [
    6.657_904_643_501_103e0,
    5.463_784_911_164_114e0,
    1.784_826_539_917_291_3e0,
    2.965_605_718_285_049e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const PPND_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];

fn horner(coeffs: &[f64; 8], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Inverse of [`std_normal_cdf`] on `(0, 1)`.
pub fn std_normal_quantile(p: f64) -> Result<f64, DistributionError> {
    check_probability(p)?;
    let q = p - 0.5;
    if q == 0.0 {
        return Ok(0.0);
    }
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return Ok(q * horner(&PPND_A, r) / horner(&PPND_B, r));
    }
    let r = p.min(1.0 - p);
    let r = (-r.ln()).sqrt();
    let v = if r <= 5.0 {
        let r = r - 1.6;
        horner(&PPND_C, r) / horner(&PPND_D, r)
    } else {
        let r = r - 5.0;
        horner(&PPND_E, r) / horner(&PPND_F, r)
    };
    Ok(if q < 0.0 { -v } else { v })
}

/// CDF of a truncated Gaussian.
pub fn truncated_cdf(spec: &TruncatedGaussianSpec, x: f64) -> f64 {
    if x <= spec.lower {
        return 0.0;
    }
    if x >= spec.upper {
        return 1.0;
    }
    let s = spec.base.stddev;
    if s == 0.0 {
        return if x >= spec.point_mass() { 1.0 } else { 0.0 };
    }
    let m = spec.base.mean;
    let (alpha, beta) = spec.standardized_bounds();
    let z = (x - m) / s;
    let value = if alpha > 0.0 {
        let sa = std_normal_cdf(-alpha);
        (sa - std_normal_cdf(-z)) / (sa - std_normal_cdf(-beta))
    } else {
        let fa = std_normal_cdf(alpha);
        (std_normal_cdf(z) - fa) / (std_normal_cdf(beta) - fa)
    };
    value.clamp(0.0, 1.0)
}

/// Exact mean and variance of a truncated Gaussian.
pub fn truncated_moments(spec: &TruncatedGaussianSpec) -> (f64, f64) {
    let m = spec.base.mean;
    let s = spec.base.stddev;
    if s == 0.0 {
        return (spec.point_mass(), 0.0);
    }
    if spec.is_untruncated() {
        return (m, s * s);
    }
    let (alpha, beta) = spec.standardized_bounds();
    let z = std_normal_interval_mass(alpha, beta);
    let pa = std_normal_pdf(alpha);
    let pb = std_normal_pdf(beta);
    // x * pdf(x) vanishes at infinite bounds; avoid inf * 0.
    let apa = if alpha.is_finite() { alpha * pa } else { 0.0 };
    let bpb = if beta.is_finite() { beta * pb } else { 0.0 };
    let shift = (pa - pb) / z;
    let mean = (m + s * shift).clamp(spec.lower, spec.upper);
    let var_factor = (1.0 + (apa - bpb) / z - shift * shift).clamp(0.0, 1.0);
    (mean, s * s * var_factor)
}

/// Smallest `d` such that `Pr(X <= d) >= gamma`.
///
/// Gaussian: `mean + stddev * quantile(gamma)`. Truncated: the solution of
/// `Phi((d - mean) / stddev) = gamma * Phi(beta) + (1 - gamma) * Phi(alpha)`,
/// clamped into `[lower, upper]`.
pub fn tightening_offset(spec: impl Into<Uncertain>, gamma: f64) -> Result<f64, DistributionError> {
    match spec.into() {
        Uncertain::Gaussian(g) => g.tightening_offset(gamma),
        Uncertain::Truncated(t) => t.tightening_offset(gamma),
    }
}
