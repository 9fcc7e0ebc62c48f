use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Law of a single input coordinate. Every built-in law is symmetric about 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Distribution {
    /// N(0, sigma²).
    Gaussian { sigma: f64 },
    /// Uniform on [-half_width, half_width].
    Uniform { half_width: f64 },
    /// ±1 with equal probability.
    Rademacher,
    /// Any law with the given E[X²], E[X⁴]. Sampled as the symmetric
    /// three-point law on {-a, 0, a} with a² = mu4/mu2 and P(X ≠ 0) = mu2²/mu4.
    Custom { mu2: f64, mu4: f64 },
}

impl Distribution {
    pub fn standard_gaussian() -> Self {
        Distribution::Gaussian { sigma: 1.0 }
    }

    /// Uniform law with unit variance, on [-√3, √3].
    pub fn unit_uniform() -> Self {
        Distribution::Uniform {
            half_width: 3f64.sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::Gaussian { sigma } => sigma.is_finite() && sigma > 0.0,
            Distribution::Uniform { half_width } => half_width.is_finite() && half_width > 0.0,
            Distribution::Rademacher => true,
            Distribution::Custom { mu2, mu4 } => {
                mu2.is_finite() && mu4.is_finite() && mu2 > 0.0 && mu4 >= mu2 * mu2
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid distribution {self}")))
        }
    }

    pub fn draw(&self, stream: &mut Stream) -> f64 {
        match *self {
            Distribution::Gaussian { sigma } => sigma * stream.standard_normal(),
            Distribution::Uniform { half_width } => half_width * (2.0 * stream.open_unit() - 1.0),
            Distribution::Rademacher => stream.sign(),
            Distribution::Custom { mu2, mu4 } => {
                let (atom, p) = three_point(mu2, mu4);
                let u = stream.open_unit();
                if u < p {
                    atom * stream.sign()
                } else {
                    0.0
                }
            }
        }
    }
}

fn three_point(mu2: f64, mu4: f64) -> (f64, f64) {
    ((mu4 / mu2).sqrt(), (mu2 * mu2 / mu4).min(1.0))
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Distribution::Gaussian { sigma } => write!(f, "gaussian({sigma})"),
            Distribution::Uniform { half_width } => write!(f, "uniform({half_width})"),
            Distribution::Rademacher => write!(f, "rademacher"),
            Distribution::Custom { mu2, mu4 } => write!(f, "custom({mu2},{mu4})"),
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    /// Accepts `gaussian`, `gaussian(σ)`, `uniform` (unit variance),
    /// `uniform(a)`, `rademacher`, and `custom(μ₂,μ₄)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                if !s.ends_with(')') {
                    return Err(Error::Parse(format!("unbalanced parentheses in {s:?}")));
                }
                let inner = &s[open + 1..s.len() - 1];
                let args = inner
                    .split(',')
                    .map(|a| {
                        a.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                (&s[..open], args)
            }
            None => (s, Vec::new()),
        };
        let dist = match (name.to_ascii_lowercase().as_str(), args.as_slice()) {
            ("gaussian" | "normal", []) => Distribution::standard_gaussian(),
            ("gaussian" | "normal", [sigma]) => Distribution::Gaussian { sigma: *sigma },
            ("uniform", []) => Distribution::unit_uniform(),
            ("uniform", [a]) => Distribution::Uniform { half_width: *a },
            ("rademacher", []) => Distribution::Rademacher,
            ("custom", [mu2, mu4]) => Distribution::Custom {
                mu2: *mu2,
                mu4: *mu4,
            },
            _ => return Err(Error::Parse(format!("unknown distribution {s:?}"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Second and fourth coordinate moments plus the derived barrier constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mu2: f64,
    pub mu4: f64,
    /// μ₄ − μ₂² = Var(X²).
    pub var_sq: f64,
    /// min{μ₄ − μ₂², 2μ₂²}.
    pub c_lower: f64,
    /// max{μ₄ − μ₂², 2μ₂²}.
    pub c_upper: f64,
    pub degenerate: bool,
}

impl Moments {
    pub fn new(mu2: f64, mu4: f64) -> Result<Self> {
        if !(mu2.is_finite() && mu4.is_finite()) || mu2 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "moments require finite mu2 > 0, got mu2={mu2}, mu4={mu4}"
            )));
        }
        // Jensen, up to rounding in the caller's arithmetic.
        if mu4 < mu2 * mu2 * (1.0 - 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "mu4={mu4} < mu2²={}",
                mu2 * mu2
            )));
        }
        let var_sq = (mu4 - mu2 * mu2).max(0.0);
        let two_sq = 2.0 * mu2 * mu2;
        Ok(Self {
            mu2,
            mu4,
            var_sq,
            c_lower: var_sq.min(two_sq),
            c_upper: var_sq.max(two_sq),
            degenerate: var_sq <= 1e-15 * mu2 * mu2,
        })
    }

    pub fn gaussian() -> Self {
        Self::new(1.0, 3.0).expect("standard gaussian moments")
    }

    /// μ₄ − 3μ₂², the coefficient of the diagonal term; zero for gaussians.
    pub fn excess(&self) -> f64 {
        self.mu4 - 3.0 * self.mu2 * self.mu2
    }

    /// Fails with a degenerate-distribution error when Var(X²) = 0.
    pub fn require_nondegenerate(&self) -> Result<()> {
        if self.degenerate {
            return Err(Error::DegenerateDistribution(format!(
                "mu2={}, mu4={}",
                self.mu2, self.mu4
            )));
        }
        Ok(())
    }
}

pub fn moments_of(distribution: &Distribution) -> Moments {
    let (mu2, mu4) = match *distribution {
        Distribution::Gaussian { sigma } => {
            let s2 = sigma * sigma;
            (s2, 3.0 * s2 * s2)
        }
        Distribution::Uniform { half_width } => {
            let a2 = half_width * half_width;
            (a2 / 3.0, a2 * a2 / 5.0)
        }
        Distribution::Rademacher => (1.0, 1.0),
        Distribution::Custom { mu2, mu4 } => (mu2, mu4),
    };
    Moments::new(mu2, mu4).expect("validated distribution has valid moments")
}

/// Moments of X conditioned on |X| ≤ threshold.
///
/// Gaussian moments come from adaptive Simpson quadrature (relative
/// tolerance 1e-12); the others are closed form. An infinite threshold
/// returns the untruncated moments.
pub fn truncated_moments(distribution: &Distribution, threshold: f64) -> Result<Moments> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "truncation threshold must be positive, got {threshold}"
        )));
    }
    if threshold.is_infinite() {
        return Ok(moments_of(distribution));
    }
    match *distribution {
        Distribution::Gaussian { sigma } => {
            let c = threshold / sigma;
            if c >= 40.0 {
                return Ok(moments_of(distribution));
            }
            let density = |x: f64| (-0.5 * x * x).exp();
            let mass = adaptive_simpson(density, 0.0, c, 1e-13);
            let m2 = adaptive_simpson(|x| x * x * density(x), 0.0, c, 1e-13) / mass;
            let m4 = adaptive_simpson(|x| x.powi(4) * density(x), 0.0, c, 1e-13) / mass;
            let s2 = sigma * sigma;
            Moments::new(m2 * s2, m4 * s2 * s2)
        }
        Distribution::Uniform { half_width } => {
            let c = threshold.min(half_width);
            Moments::new(c * c / 3.0, c.powi(4) / 5.0)
        }
        Distribution::Rademacher => {
            if threshold >= 1.0 {
                Ok(moments_of(distribution))
            } else {
                Err(Error::InvalidArgument(format!(
                    "P(|X| <= {threshold}) = 0 for rademacher"
                )))
            }
        }
        Distribution::Custom { mu2, mu4 } => {
            let (atom, _) = three_point(mu2, mu4);
            if threshold >= atom {
                Ok(moments_of(distribution))
            } else {
                Err(Error::InvalidArgument(format!(
                    "truncation at {threshold} leaves only the atom at 0 of {distribution}"
                )))
            }
        }
    }
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        // The first few levels always split: a symmetric integrand can make
        // the coarse error estimate vanish by accident.
        if depth == 0 || (depth < 44 && delta.abs() <= 15.0 * tol) {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }

    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    // Coarse magnitude estimate to turn the relative tolerance into an absolute one.
    let scale = (0..=64)
        .map(|k| f(a + (b - a) * k as f64 / 64.0).abs())
        .fold(0.0, f64::max)
        * (b - a);
    let tol = (rel_tol * scale).max(f64::MIN_POSITIVE);
    recurse(&f, a, fa, b, fb, m, fm, whole, tol, 48)
}
