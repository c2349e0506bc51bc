use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{build_cache, Dictionary, GroundTruth, Observation, Support, DEFAULT_RANK_TOL};

/// Rejections allowed per atom before falling back to orthogonal mixing.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// How the additive distortion `e` is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionSpec {
    None,
    /// i.i.d. `N(0, σ²)` entries.
    Gaussian {
        sigma: f64,
    },
    /// `e = β·s·P⊥_Λ a_j / ‖P⊥_Λ a_j‖₂`; `target = None` picks a random atom
    /// outside the support.
    Directional {
        target: Option<usize>,
        magnitude: f64,
        sign: Sign,
    },
    /// `e = w Σ_{p<q ∈ Λ} x_p x_q (a_p ⊙ a_q)/‖a_p ⊙ a_q‖₂`.
    Bilinear {
        weight: f64,
    },
}

impl DistortionSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistortionSpec::None => true,
            DistortionSpec::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            DistortionSpec::Directional { magnitude, .. } => {
                magnitude >= 0.0 && magnitude.is_finite()
            }
            DistortionSpec::Bilinear { weight } => weight.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InfeasibleSpec(format!(
                "invalid distortion parameters: {}",
                self
            )))
        }
    }
}

impl fmt::Display for DistortionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistortionSpec::None => write!(f, "none"),
            DistortionSpec::Gaussian { sigma } => write!(f, "gaussian:sigma={}", sigma),
            DistortionSpec::Directional {
                target,
                magnitude,
                sign,
            } => {
                write!(f, "directional:")?;
                if let Some(j) = target {
                    write!(f, "j={},", j)?;
                }
                let s = if sign == Sign::Plus { '+' } else { '-' };
                write!(f, "beta={},sign={}", magnitude, s)
            }
            DistortionSpec::Bilinear { weight } => write!(f, "bilinear:weight={}", weight),
        }
    }
}

/// Parses `none`, `gaussian:sigma=S`, `directional:[j=J,]beta=B,sign=±`
/// and `bilinear:weight=W`.
impl FromStr for DistortionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidArgument(format!("distortion '{}': {}", s, msg));
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = std::collections::BTreeMap::new();
        for kv in rest.split(',').filter(|t| !t.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            if params.insert(k.trim(), v.trim()).is_some() {
                return Err(bad("repeated key"));
            }
        }
        let mut take_f64 = |key: &str| -> Result<f64> {
            params
                .remove(key)
                .ok_or_else(|| bad(&format!("missing {}", key)))?
                .parse::<f64>()
                .map_err(|_| bad(&format!("{} is not a number", key)))
        };
        let spec = match kind.trim() {
            "none" => DistortionSpec::None,
            "gaussian" => DistortionSpec::Gaussian {
                sigma: take_f64("sigma")?,
            },
            "bilinear" => DistortionSpec::Bilinear {
                weight: take_f64("weight")?,
            },
            "directional" => {
                let magnitude = take_f64("beta")?;
                let target = params
                    .remove("j")
                    .map(|v| v.parse::<usize>().map_err(|_| bad("j is not an index")))
                    .transpose()?;
                let sign = match params.remove("sign").unwrap_or("+") {
                    "+" | "plus" => Sign::Plus,
                    "-" | "minus" => Sign::Minus,
                    _ => return Err(bad("sign must be + or -")),
                };
                DistortionSpec::Directional {
                    target,
                    magnitude,
                    sign,
                }
            }
            _ => return Err(bad("unknown kind")),
        };
        if let Some(k) = params.keys().next() {
            return Err(bad(&format!("unknown key {}", k)));
        }
        Ok(spec)
    }
}

/// Parameters of one synthetic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub l: usize,
    pub n: usize,
    pub j: usize,
    /// Upper bound on the largest absolute cosine between two atoms.
    pub coherence_target: f64,
    pub coefficient_range: (f64, f64),
    pub distortion: DistortionSpec,
    pub seed: u64,
    /// Fixed generating support; drawn at random when absent.
    pub support: Option<Vec<usize>>,
}

impl InstanceSpec {
    pub fn new(l: usize, n: usize, j: usize, seed: u64) -> Self {
        Self {
            l,
            n,
            j,
            coherence_target: 0.9,
            coefficient_range: (0.2, 1.0),
            distortion: DistortionSpec::None,
            seed,
            support: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InfeasibleSpec(m));
        if self.l == 0 || self.n == 0 {
            return fail("L and N must be positive".into());
        }
        if self.j == 0 || self.j > self.l.min(self.n) {
            return fail(format!(
                "J = {} must lie in 1..=min(L, N) = {}",
                self.j,
                self.l.min(self.n)
            ));
        }
        if !(0.0..1.0).contains(&self.coherence_target) {
            return fail("coherence target must lie in [0, 1)".into());
        }
        let (lo, hi) = self.coefficient_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return fail("coefficient range must satisfy 0 < min <= max".into());
        }
        if let Some(s) = &self.support {
            if s.len() != self.j {
                return fail("support size differs from J".into());
            }
            Support::from_unsorted(s.clone(), self.n)
                .map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
        }
        self.distortion.validate()
    }
}

/// A generated dictionary, signal and the truth behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub dict: Dictionary,
    pub truth: GroundTruth,
    pub y: Observation,
    pub support: Support,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, l: usize) -> DVector<f64> {
    let v: DVector<f64> = DVector::from_fn(l, |_, _| StandardNormal.sample(rng));
    let norm = v.norm();
    v / norm
}

fn max_cosine(atoms: &[DVector<f64>], candidate: &DVector<f64>) -> f64 {
    atoms
        .iter()
        .map(|a| a.dot(candidate).abs())
        .fold(0.0, f64::max)
}

/// Unit atoms sharing a common direction with weight `coherence_target / 2`,
/// each accepted only when its cosine with every earlier atom stays within
/// the target. Falls back to exact orthogonal mixing (all cosines equal to
/// the target) when rejection stalls and `N < L`.
fn generate_atoms(
    rng: &mut ChaCha8Rng,
    l: usize,
    n: usize,
    target: f64,
) -> Result<Vec<DVector<f64>>> {
    let mix = target / 2.0;
    let common = unit_gaussian(rng, l);
    let mut atoms: Vec<DVector<f64>> = Vec::with_capacity(n);
    'atoms: for _ in 0..n {
        for _ in 0..MAX_REJECTIONS {
            let g = unit_gaussian(rng, l);
            let a = &common * mix.sqrt() + g * (1.0 - mix).sqrt();
            let a = &a / a.norm();
            if max_cosine(&atoms, &a) <= target {
                atoms.push(a);
                continue 'atoms;
            }
        }
        return orthogonal_mixing(rng, l, n, target);
    }
    Ok(atoms)
}

fn orthogonal_mixing(
    rng: &mut ChaCha8Rng,
    l: usize,
    n: usize,
    target: f64,
) -> Result<Vec<DVector<f64>>> {
    if n + 1 > l {
        return Err(Error::InfeasibleSpec(format!(
            "coherence target {} not reached for N = {} atoms in L = {} bands",
            target, n, l
        )));
    }
    let g: DMatrix<f64> = DMatrix::from_fn(l, n + 1, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let common = q.column(0).into_owned();
    Ok((1..=n)
        .map(|k| &common * target.sqrt() + q.column(k) * (1.0 - target).sqrt())
        .collect())
}

/// Draws a dictionary, a support, coefficients and a distortion, and forms
/// `y = A x + e`. Deterministic in `spec.seed`.
pub fn generate(spec: &InstanceSpec) -> Result<Instance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let atoms = generate_atoms(&mut rng, spec.l, spec.n, spec.coherence_target)?;
    let dict = Dictionary::from_atoms(&atoms)?;

    let support = match &spec.support {
        Some(s) => Support::from_unsorted(s.clone(), spec.n)?,
        None => Support::from_unsorted(sample(&mut rng, spec.n, spec.j).into_vec(), spec.n)?,
    };
    let (lo, hi) = spec.coefficient_range;
    let mut x = DVector::zeros(spec.n);
    for &j in support.indices() {
        x[j] = if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        };
    }
    let signal = dict.matrix() * &x;

    let e = match spec.distortion {
        DistortionSpec::None => DVector::zeros(spec.l),
        DistortionSpec::Gaussian { sigma } => {
            let normal =
                Normal::new(0.0, sigma).map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
            DVector::from_fn(spec.l, |_, _| normal.sample(&mut rng))
        }
        DistortionSpec::Directional {
            target,
            magnitude,
            sign,
        } => {
            let outside = support.complement(spec.n);
            let j = match target {
                Some(j) if j >= spec.n => {
                    return Err(Error::InfeasibleSpec(format!(
                        "target atom {} out of range",
                        j
                    )))
                }
                Some(j) if support.contains(j) => {
                    return Err(Error::InfeasibleSpec(format!(
                        "target atom {} lies in the support {}",
                        j, support
                    )))
                }
                Some(j) => j,
                None if outside.is_empty() => {
                    return Err(Error::InfeasibleSpec(
                        "no atom outside the support to target".into(),
                    ))
                }
                None => outside[rng.random_range(0..outside.len())],
            };
            let cache = build_cache(&dict, &support, DEFAULT_RANK_TOL)?;
            let dir = cache.project_out(&dict.atom(j));
            let norm = dir.norm();
            if norm <= 1e-12 {
                return Err(Error::InfeasibleSpec(format!(
                    "atom {} lies in the span of the support",
                    j
                )));
            }
            dir * (magnitude * sign.value() / norm)
        }
        DistortionSpec::Bilinear { weight } => {
            let mut e = DVector::zeros(spec.l);
            let idx = support.indices();
            for (k, &p) in idx.iter().enumerate() {
                for &q in &idx[k + 1..] {
                    let h = atoms[p].component_mul(&atoms[q]);
                    let norm = h.norm();
                    if norm > 0.0 {
                        e += h * (weight * x[p] * x[q] / norm);
                    }
                }
            }
            e
        }
    };

    let y = Observation::new(signal + &e)?;
    Ok(Instance {
        dict,
        truth: GroundTruth::new(x, e)?,
        y,
        support,
    })
}

/// Smooth positive spectra with every pairwise cosine inside `cos_range`,
/// a stand-in for a small library of highly correlated reference spectra.
pub fn spectral_library(
    l: usize,
    n: usize,
    cos_range: (f64, f64),
    seed: u64,
) -> Result<Dictionary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10 * MAX_REJECTIONS {
        let atoms: Vec<DVector<f64>> = (0..n)
            .map(|_| {
                let bumps: Vec<(f64, f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            rng.random_range(0.2..1.0),
                            rng.random_range(0.0..1.0),
                            rng.random_range(0.05..0.3),
                        )
                    })
                    .collect();
                let baseline = rng.random_range(0.1..0.5);
                let v = DVector::from_fn(l, |i, _| {
                    let t = i as f64 / (l.max(2) - 1) as f64;
                    baseline
                        + bumps
                            .iter()
                            .map(|&(h, mu, w)| h * (-(t - mu).powi(2) / (2.0 * w * w)).exp())
                            .sum::<f64>()
                });
                let norm = v.norm();
                v / norm
            })
            .collect();
        let ok = (0..n).all(|i| {
            (i + 1..n).all(|k| {
                let c = atoms[i].dot(&atoms[k]);
                c >= cos_range.0 && c <= cos_range.1
            })
        });
        if ok {
            return Dictionary::from_atoms(&atoms);
        }
    }
    Err(Error::InfeasibleSpec(format!(
        "no library of {} spectra with cosines in [{}, {}]",
        n, cos_range.0, cos_range.1
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_distortions() {
        for s in [
            "none",
            "gaussian:sigma=0.01",
            "directional:j=5,beta=0.1,sign=-",
            "directional:beta=2,sign=+",
            "bilinear:weight=0.3",
        ] {
            let d: DistortionSpec = s.parse().unwrap();
            assert_eq!(d.to_string().parse::<DistortionSpec>().unwrap(), d);
        }
        assert_eq!(
            "directional:j=5,beta=0.1,sign=-"
                .parse::<DistortionSpec>()
                .unwrap(),
            DistortionSpec::Directional {
                target: Some(5),
                magnitude: 0.1,
                sign: Sign::Minus
            }
        );
        assert!("gaussian".parse::<DistortionSpec>().is_err());
        assert!("gaussian:sigma=1,foo=2".parse::<DistortionSpec>().is_err());
        assert!("laplace:b=1".parse::<DistortionSpec>().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let mut spec = InstanceSpec::new(50, 12, 3, 7);
        spec.distortion = DistortionSpec::Gaussian { sigma: 0.05 };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        spec.seed = 8;
        assert_ne!(generate(&spec).unwrap().dict, a.dict);
    }

    #[test]
    fn atoms_are_unit_and_within_coherence() {
        for target in [0.3, 0.9, 0.99] {
            let mut spec = InstanceSpec::new(50, 12, 3, 1);
            spec.coherence_target = target;
            let inst = generate(&spec).unwrap();
            for j in 0..12 {
                assert!((inst.dict.atom(j).norm() - 1.0).abs() < 1e-12);
            }
            assert!(inst.dict.coherence() <= target + 1e-12);
        }
        // zero coherence is only reachable through orthogonal mixing
        let mut spec = InstanceSpec::new(20, 5, 2, 1);
        spec.coherence_target = 0.0;
        assert!(generate(&spec).unwrap().dict.coherence() < 1e-12);
        let mut spec = InstanceSpec::new(5, 8, 2, 1);
        spec.coherence_target = 0.0;
        assert!(matches!(generate(&spec), Err(Error::InfeasibleSpec(_))));
    }

    #[test]
    fn noiseless_signal_lies_in_support_span() {
        let inst = generate(&InstanceSpec::new(50, 12, 3, 3)).unwrap();
        let cache = build_cache(&inst.dict, &inst.support, DEFAULT_RANK_TOL).unwrap();
        assert!(cache.project_out(inst.y.values()).amax() < 1e-12);
        assert_eq!(inst.truth.support(), inst.support);

        let mut spec = InstanceSpec::new(50, 12, 3, 3);
        spec.distortion = DistortionSpec::Gaussian { sigma: 0.0 };
        assert_eq!(generate(&spec).unwrap(), inst);
    }

    #[test]
    fn directional_distortion_identity() {
        for sign in [Sign::Plus, Sign::Minus] {
            let mut spec = InstanceSpec::new(30, 8, 2, 11);
            spec.support = Some(vec![1, 4]);
            spec.distortion = DistortionSpec::Directional {
                target: Some(5),
                magnitude: 0.3,
                sign,
            };
            let inst = generate(&spec).unwrap();
            let cache = build_cache(&inst.dict, &inst.support, DEFAULT_RANK_TOL).unwrap();
            let pa = cache.project_out(&inst.dict.atom(5));
            let lhs = inst.y.values().dot(&pa);
            assert!((lhs - sign.value() * 0.3 * pa.norm()).abs() < 1e-10);
        }
        let mut spec = InstanceSpec::new(30, 8, 2, 11);
        spec.support = Some(vec![1, 4]);
        spec.distortion = DistortionSpec::Directional {
            target: Some(4),
            magnitude: 0.3,
            sign: Sign::Plus,
        };
        assert!(matches!(generate(&spec), Err(Error::InfeasibleSpec(_))));
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(matches!(
            generate(&InstanceSpec::new(50, 12, 13, 0)),
            Err(Error::InfeasibleSpec(_))
        ));
        let mut spec = InstanceSpec::new(50, 12, 3, 0);
        spec.coefficient_range = (0.0, 1.0);
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn spectral_library_is_correlated() {
        let d = spectral_library(60, 5, (0.7, 0.95), 4).unwrap();
        for i in 0..5 {
            for k in i + 1..5 {
                let c = d.atom(i).dot(&d.atom(k));
                assert!((0.7..=0.95).contains(&c));
            }
        }
    }
}
