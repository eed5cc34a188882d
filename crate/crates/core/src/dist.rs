//! Symmetric distributions of normalized frequency deviations.
//!
//! Every family is described by its CDF `F`, its super-cumulative
//! distribution function `phi` (the antiderivative of `F` anchored at
//! `phi(-1) = 0`) and its mean absolute deviation `mad = 2 phi(0)`.
//! Discrete and empirical families share one representation: a sorted list
//! of atoms with prefix sums of mass and first moment, so that `F` and `phi`
//! are both evaluated by one binary search.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Logistic,
    TwoPointLower,
    ThreePointUpper,
    Empirical,
}

impl DistributionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistributionKind::Logistic => "logistic",
            DistributionKind::TwoPointLower => "two_point_lower",
            DistributionKind::ThreePointUpper => "three_point_upper",
            DistributionKind::Empirical => "empirical",
        }
    }
}

impl std::str::FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(DistributionKind::Logistic),
            "two_point_lower" => Ok(DistributionKind::TwoPointLower),
            "three_point_upper" => Ok(DistributionKind::ThreePointUpper),
            "empirical" => Ok(DistributionKind::Empirical),
            _ => Err(Error::Config {
                path: "distribution.kind".into(),
                message: format!("unknown distribution kind `{s}`"),
            }),
        }
    }
}

/// A point mass at `location` carrying probability `mass`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

#[derive(Clone, Debug)]
pub struct DeviationDistribution {
    kind: DistributionKind,
    mad: f64,
    theta: Option<f64>,
    atoms: Vec<Atom>,
    // cum_mass[k] = sum of the first k masses, cum_moment[k] likewise for mass * location
    cum_mass: Vec<f64>,
    cum_moment: Vec<f64>,
    samples: Vec<f64>,
}

fn check_mad(mad: f64) -> Result<()> {
    if !(mad > 0.0 && mad <= 1.0) {
        return Err(Error::domain("mad", mad, "must lie in (0, 1]"));
    }
    Ok(())
}

impl DeviationDistribution {
    /// Logistic deviations with `F(z) = 1 / (1 + exp(-theta z))` and
    /// `theta = 2 ln 2 / mad`. The support is not truncated to `[-1, 1]`.
    pub fn logistic(mad: f64) -> Result<Self> {
        check_mad(mad)?;
        Ok(Self {
            kind: DistributionKind::Logistic,
            mad,
            theta: Some(2.0 * std::f64::consts::LN_2 / mad),
            atoms: Vec::new(),
            cum_mass: Vec::new(),
            cum_moment: Vec::new(),
            samples: Vec::new(),
        })
    }

    /// Mass 1/2 at `-mad` and `+mad`; the least dispersed law with this MAD.
    pub fn two_point_lower(mad: f64) -> Result<Self> {
        check_mad(mad)?;
        Ok(Self::from_atoms(
            DistributionKind::TwoPointLower,
            mad,
            vec![
                Atom {
                    location: -mad,
                    mass: 0.5,
                },
                Atom {
                    location: mad,
                    mass: 0.5,
                },
            ],
        ))
    }

    /// Mass `mad/2` at `-1` and `+1`, mass `1 - mad` at `0`.
    pub fn three_point_upper(mad: f64) -> Result<Self> {
        check_mad(mad)?;
        let mut atoms = vec![Atom {
            location: -1.0,
            mass: 0.5 * mad,
        }];
        if mad < 1.0 {
            atoms.push(Atom {
                location: 0.0,
                mass: 1.0 - mad,
            });
        }
        atoms.push(Atom {
            location: 1.0,
            mass: 0.5 * mad,
        });
        Ok(Self::from_atoms(
            DistributionKind::ThreePointUpper,
            mad,
            atoms,
        ))
    }

    /// Empirical law of `samples` after reflection: every sample is paired
    /// with its negation so the result is exactly symmetric.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("empirical distribution needs samples"));
        }
        if let Some(&bad) = samples.iter().find(|x| !(x.abs() <= 1.0)) {
            return Err(Error::domain("samples", bad, "must lie in [-1, 1]"));
        }
        let mut sym: Vec<f64> = samples.iter().flat_map(|&x| [x, -x]).collect();
        sym.sort_by(|a, b| a.total_cmp(b));
        let n = sym.len() as f64;
        let mad = sym.iter().map(|x| x.abs()).sum::<f64>() / n;
        if mad <= 0.0 {
            return Err(Error::DegenerateDistribution(
                "all samples are zero, mean absolute deviation vanishes",
            ));
        }

        let mut atoms: Vec<Atom> = Vec::new();
        let w = 1.0 / n;
        for &x in &sym {
            match atoms.last_mut() {
                Some(a) if a.location == x => a.mass += w,
                _ => atoms.push(Atom {
                    location: x,
                    mass: w,
                }),
            }
        }
        let mut dist = Self::from_atoms(DistributionKind::Empirical, mad, atoms);
        dist.samples = sym;
        Ok(dist)
    }

    /// Dispatches on `kind`; `mad` is ignored for the empirical family.
    pub fn build(kind: DistributionKind, mad: f64, samples: Option<&[f64]>) -> Result<Self> {
        match kind {
            DistributionKind::Logistic => Self::logistic(mad),
            DistributionKind::TwoPointLower => Self::two_point_lower(mad),
            DistributionKind::ThreePointUpper => Self::three_point_upper(mad),
            DistributionKind::Empirical => Self::empirical(samples.unwrap_or(&[])),
        }
    }

    fn from_atoms(kind: DistributionKind, mad: f64, atoms: Vec<Atom>) -> Self {
        let mut cum_mass = Vec::with_capacity(atoms.len() + 1);
        let mut cum_moment = Vec::with_capacity(atoms.len() + 1);
        let (mut m, mut s) = (0.0, 0.0);
        cum_mass.push(0.0);
        cum_moment.push(0.0);
        for a in &atoms {
            m += a.mass;
            s += a.mass * a.location;
            cum_mass.push(m);
            cum_moment.push(s);
        }
        Self {
            kind,
            mad,
            theta: None,
            atoms,
            cum_mass,
            cum_moment,
            samples: Vec::new(),
        }
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    /// Mean absolute deviation `E|xi|`.
    pub fn mad(&self) -> f64 {
        self.mad
    }

    /// Logistic scale parameter, `None` for other families.
    pub fn theta(&self) -> Option<f64> {
        self.theta
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Sorted, symmetrized samples (empirical family only).
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn is_atomless(&self) -> bool {
        self.theta.is_some()
    }

    /// Right-continuous CDF.
    pub fn cdf(&self, z: f64) -> f64 {
        match self.theta {
            Some(theta) => logistic_cdf(theta * z),
            None => {
                let k = self.atoms.partition_point(|a| a.location <= z);
                self.cum_mass[k].min(1.0)
            }
        }
    }

    /// Left limit `F(z-)`; equals [`cdf`](Self::cdf) away from atoms.
    pub fn cdf_left(&self, z: f64) -> f64 {
        match self.theta {
            Some(theta) => logistic_cdf(theta * z),
            None => {
                let k = self.atoms.partition_point(|a| a.location < z);
                self.cum_mass[k].min(1.0)
            }
        }
    }

    /// Super-cumulative distribution function `phi(z) = int_{-inf}^z F`.
    pub fn scdf(&self, z: f64) -> f64 {
        match self.theta {
            Some(theta) => softplus(theta * z) / theta,
            None => {
                let k = self.atoms.partition_point(|a| a.location <= z);
                (z * self.cum_mass[k] - self.cum_moment[k]).max(0.0)
            }
        }
    }

    /// Draws one deviation in `[-1, 1]`. Logistic draws are clipped.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self.theta {
            Some(theta) => {
                let u = u.max(f64::MIN_POSITIVE);
                ((u.ln() - (-u).ln_1p()) / theta).clamp(-1.0, 1.0)
            }
            None => {
                let k = self.cum_mass[1..].partition_point(|&c| c <= u);
                self.atoms[k.min(self.atoms.len() - 1)].location
            }
        }
    }

    /// `n` deterministic draws for the given seed.
    pub fn sample(&self, seed: u64, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::EmptyInput("sample size must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| self.draw(&mut rng)).collect())
    }
}

fn logistic_cdf(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Sample mean absolute deviation.
pub fn mean_abs(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().map(|x| x.abs()).sum::<f64>() / xs.len() as f64)
    }
}

/// Reads one value per line; blank lines and `#` comments are skipped.
pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: f64 = t.parse().map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("`{t}`: {e}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Distribution block of a problem config.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_path: Option<PathBuf>,
}

impl DistributionSpec {
    /// Builds the distribution; relative sample paths resolve against `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<DeviationDistribution> {
        match self.kind {
            DistributionKind::Empirical => {
                let rel = self.samples_path.as_ref().ok_or_else(|| Error::Config {
                    path: "distribution.samples_path".into(),
                    message: "required for the empirical family".into(),
                })?;
                let path = match base {
                    Some(b) if rel.is_relative() => b.join(rel),
                    _ => rel.clone(),
                };
                DeviationDistribution::empirical(&read_samples(&path)?)
            }
            kind => {
                let mad = self.mad.ok_or_else(|| Error::Config {
                    path: "distribution.mad".into(),
                    message: "required for parametric families".into(),
                })?;
                DeviationDistribution::build(kind, mad, None)
            }
        }
    }
}
