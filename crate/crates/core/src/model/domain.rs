use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounded operating region `O`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

/// Collar widths `δ_Υ < δ_d < δ_u` around the region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Margins {
    /// `δ_Υ`: pairs tested for distinguishability live in `O + δ_Υ`.
    pub upsilon: f64,
    /// `δ_d`: the cutoff is identically one on `O + δ_d`.
    pub distinguish: f64,
    /// `δ_u`: the cutoff vanishes outside `O + δ_u`.
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub region: Region,
    pub margins: Margins,
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Box { lower, .. } => lower.len(),
            Region::Ball { center, .. } => center.len(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Region::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| (u - l).powi(2)).sum::<f64>().sqrt()
            }
            Region::Ball { radius, .. } => 2.0 * radius,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Region::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::Domain("box bounds must be nonempty and of equal length".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
                    return Err(Error::Domain("box needs finite lower < upper on every axis".into()));
                }
            }
            Region::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::Domain("ball needs a nonempty center and a positive radius".into()));
                }
            }
        }
        Ok(())
    }
}

impl Margins {
    /// Defaults `δ_Υ = 0.05·diam`, `δ_d = 0.1·diam`, `δ_u = 0.2·diam`.
    pub fn default_for(region: &Region) -> Self {
        let d = region.diameter();
        Self { upsilon: 0.05 * d, distinguish: 0.1 * d, cutoff: 0.2 * d }
    }
}

impl DomainSpec {
    pub fn new(region: Region, margins: Margins) -> Result<Self> {
        region.validate()?;
        let Margins { upsilon, distinguish, cutoff } = margins;
        if !(0.0 < upsilon && upsilon < distinguish && distinguish < cutoff) || !cutoff.is_finite() {
            return Err(Error::Domain(format!(
                "margins must satisfy 0 < upsilon < distinguish < cutoff, got {upsilon}, {distinguish}, {cutoff}"
            )));
        }
        Ok(Self { region, margins })
    }

    pub fn with_default_margins(region: Region) -> Result<Self> {
        let margins = Margins::default_for(&region);
        Self::new(region, margins)
    }

    pub fn boxed(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::with_default_margins(Region::Box { lower: lower.to_vec(), upper: upper.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    /// Euclidean distance from `x` to `cl(O)`, exact for both shapes.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match &self.region {
            Region::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| {
                    let d = if v < l {
                        l - v
                    } else if v > u {
                        v - u
                    } else {
                        0.0
                    };
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Region::Ball { center, radius } => {
                let r = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
                (r - radius).max(0.0)
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance(x) == 0.0
    }

    /// Nearest point of `cl(O)`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match &self.region {
            Region::Box { lower, upper } => {
                x.iter().zip(lower.iter().zip(upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect()
            }
            Region::Ball { center, radius } => {
                let r = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
                if r <= *radius {
                    x.to_vec()
                } else {
                    x.iter().zip(center).map(|(a, c)| c + (a - c) * radius / r).collect()
                }
            }
        }
    }

    /// Axis-aligned bounding box of `cl(O)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.region {
            Region::Box { lower, upper } => (lower.clone(), upper.clone()),
            Region::Ball { center, radius } => {
                (center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())
            }
        }
    }

    /// `sup |x|` over `cl(O + δ_u)`.
    pub fn collar_sup_norm(&self) -> f64 {
        let du = self.margins.cutoff;
        match &self.region {
            Region::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| l.abs().max(u.abs()).powi(2)).sum::<f64>().sqrt() + du
            }
            Region::Ball { center, radius } => {
                center.iter().map(|c| c * c).sum::<f64>().sqrt() + radius + du
            }
        }
    }

    /// Canonical byte form used for fingerprints.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match &self.region {
            Region::Box { lower, upper } => {
                out.push(0u8);
                for (l, u) in lower.iter().zip(upper) {
                    out.extend_from_slice(&l.to_le_bytes());
                    out.extend_from_slice(&u.to_le_bytes());
                }
            }
            Region::Ball { center, radius } => {
                out.push(1u8);
                for c in center {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                out.extend_from_slice(&radius.to_le_bytes());
            }
        }
        for m in [self.margins.upsilon, self.margins.distinguish, self.margins.cutoff] {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out
    }
}
