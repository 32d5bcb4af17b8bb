//! Penalties, the least-squares criterion and the selection rule.

use serde::{Deserialize, Serialize};

use crate::bounds::{oracle_constant, remainder_r, u_factor};
use crate::error::{Error, Result};
use crate::linspace::Subspace;
use crate::models::{Family, ModelCollection};
use crate::noise::NoiseSpec;
use crate::KAPPA;

/// Which penalty display to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyMode {
    /// `Kκ²(σ² + 2cu/κ)(D_m + Δ_m)` with `u` from [`u_factor`]. `z = None`
    /// means `log n`.
    General { k: f64, z: Option<f64> },
    Histogram { k: f64, a: f64, b: f64 },
    Piecewise { k: f64, a: f64, b: f64, d: usize },
    Trig { k: f64, a: f64, b: f64 },
}

impl PenaltyMode {
    pub fn name(&self) -> &'static str {
        match self {
            PenaltyMode::General { .. } => "general",
            PenaltyMode::Histogram { .. } => "histogram",
            PenaltyMode::Piecewise { .. } => "piecewise",
            PenaltyMode::Trig { .. } => "trig",
        }
    }

    pub fn k(&self) -> f64 {
        match *self {
            PenaltyMode::General { k, .. }
            | PenaltyMode::Histogram { k, .. }
            | PenaltyMode::Piecewise { k, .. }
            | PenaltyMode::Trig { k, .. } => k,
        }
    }
}

/// Penalty display plus a multiplier applied to `pen` only (1 = equality in
/// the lower bound).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    pub mode: PenaltyMode,
    pub multiplier: f64,
}

impl PenaltySpec {
    pub fn new(mode: PenaltyMode) -> Self {
        Self { mode, multiplier: 1.0 }
    }

    pub fn general(k: f64) -> Self {
        Self::new(PenaltyMode::General { k, z: None })
    }

    pub fn with_multiplier(mut self, multiplier: f64) -> Self {
        self.multiplier = multiplier;
        self
    }
}

/// JSON form `{"mode", "K", "z", "a", "b", "d", "multiplier"}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyDoc {
    pub mode: String,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<f64>,
}

impl PenaltySpec {
    pub fn from_doc(doc: &PenaltyDoc) -> Result<Self> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("penalty mode {} needs \"{name}\"", doc.mode)))
        };
        let k = doc.k;
        let mode = match doc.mode.as_str() {
            "general" => PenaltyMode::General { k, z: doc.z },
            "histogram" => PenaltyMode::Histogram {
                k,
                a: need(doc.a, "a")?,
                b: need(doc.b, "b")?,
            },
            "piecewise" => PenaltyMode::Piecewise {
                k,
                a: need(doc.a, "a")?,
                b: need(doc.b, "b")?,
                d: doc
                    .d
                    .ok_or_else(|| Error::Config("penalty mode piecewise needs \"d\"".into()))?,
            },
            "trig" => PenaltyMode::Trig {
                k,
                a: need(doc.a, "a")?,
                b: need(doc.b, "b")?,
            },
            other => return Err(Error::Config(format!("unknown penalty mode \"{other}\""))),
        };
        Ok(Self {
            mode,
            multiplier: doc.multiplier.unwrap_or(1.0),
        })
    }

    pub fn to_doc(&self) -> PenaltyDoc {
        let mut doc = PenaltyDoc {
            mode: self.mode.name().into(),
            k: self.mode.k(),
            multiplier: (self.multiplier != 1.0).then_some(self.multiplier),
            ..Default::default()
        };
        match self.mode {
            PenaltyMode::General { z, .. } => doc.z = z,
            PenaltyMode::Histogram { a, b, .. } | PenaltyMode::Trig { a, b, .. } => {
                doc.a = Some(a);
                doc.b = Some(b);
            }
            PenaltyMode::Piecewise { a, b, d, .. } => {
                doc.a = Some(a);
                doc.b = Some(b);
                doc.d = Some(d);
            }
        }
        doc
    }
}

/// A penalty instantiated on a collection and a noise certificate:
/// `pen(m) = multiplier · per_unit · (D_m + Δ_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Penalty {
    pub mode: &'static str,
    pub k: f64,
    pub per_unit: f64,
    pub multiplier: f64,
    /// `u` of the general display (`None` in proposition modes).
    pub u: Option<f64>,
    /// Value of `z`; infinite when `c = 0` in general mode, where the
    /// penalty does not depend on `z` and the remainder is taken at its limit.
    pub z: f64,
    /// Remainder `R` of the bracketed form `C(K)[inf + R]`.
    pub remainder: f64,
    /// Remainder of the `c = 0` form `C(K)·inf + R`, when it applies.
    pub corollary_remainder: Option<f64>,
}

impl Penalty {
    pub fn calibrate(spec: &PenaltySpec, noise: &NoiseSpec, coll: &ModelCollection) -> Result<Self> {
        let k = spec.mode.k();
        oracle_constant(k)?;
        if !(spec.multiplier > 0.0 && spec.multiplier.is_finite()) {
            return Err(Error::InvalidArgument(format!("penalty multiplier {}", spec.multiplier)));
        }
        let sigma = noise.sigma();
        let c = noise.c();
        let consts = coll.constants();
        let total_weight = consts.sigma;
        let n = coll.n();
        let nf = n as f64;
        let k2 = KAPPA * KAPPA;
        let mismatch = || Error::ModeFamilyMismatch {
            mode: spec.mode.name().into(),
            family: coll.family().name().into(),
        };
        let check_condition = |a: f64| -> Result<()> {
            if !(a > 0.0) {
                return Err(Error::InvalidArgument(format!("a must be positive, got {a}")));
            }
            let cond = coll.condition(a);
            if cond.holds {
                Ok(())
            } else {
                Err(Error::ConditionViolated(format!(
                    "{} fails: lhs = {}, rhs = {}",
                    cond.statement, cond.lhs, cond.rhs
                )))
            }
        };
        let check_b = |b: f64| -> Result<()> {
            if b > 0.0 && b.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("b must be positive, got {b}")))
            }
        };

        let (per_unit, u, z, remainder) = match spec.mode {
            PenaltyMode::General { z, .. } => {
                if c == 0.0 {
                    let u = u_factor(sigma, c, consts.lambda_bar_inf, consts.lambda2_sn, n, 0.0);
                    let r = remainder_r(sigma, c, u, consts.lambda_bar_inf, f64::INFINITY, total_weight);
                    (k * k2 * sigma * sigma, None, f64::INFINITY, r)
                } else {
                    let z = z.unwrap_or(nf.ln());
                    if !(z >= 0.0 && z.is_finite()) {
                        return Err(Error::InvalidArgument(format!("z must be finite and ≥ 0, got {z}")));
                    }
                    let u = u_factor(sigma, c, consts.lambda_bar_inf, consts.lambda2_sn, n, z);
                    let per = k * k2 * (sigma * sigma + 2.0 * c * u / KAPPA);
                    let r = remainder_r(sigma, c, u, consts.lambda_bar_inf, z, total_weight);
                    (per, Some(u), z, r)
                }
            }
            PenaltyMode::Histogram { a, b, .. } => {
                if coll.family() != Family::Histogram {
                    return Err(mismatch());
                }
                check_b(b)?;
                check_condition(a)?;
                let inner = sigma * sigma + 2.0 * c * (sigma + c) * (b + 2.0) / (a * KAPPA);
                let tail = 2.0 * (c + sigma).powi(2) * (b + 2.0).powi(2) / (a * a * nf.powf(b));
                (k * k2 * inner, None, b * nf.ln(), k2 * inner * total_weight + tail)
            }
            PenaltyMode::Piecewise { a, b, d, .. } => {
                match coll.family() {
                    Family::PiecewisePoly { d: cd } if cd == d => {}
                    _ => return Err(mismatch()),
                }
                check_b(b)?;
                check_condition(a)?;
                let df = d as f64 + 1.0;
                let inner = sigma * sigma
                    + c * 4.0 * std::f64::consts::SQRT_2 * (sigma + c) * df * (b + 2.0) / (a * KAPPA);
                let tail = 4.0 * (c + sigma).powi(2) * (b + 2.0).powi(2) / (a * a * nf.powf(b));
                (k * k2 * inner, None, b * nf.ln(), k2 * inner * total_weight + tail)
            }
            PenaltyMode::Trig { a, b, .. } => {
                let dbar = match coll.family() {
                    Family::Trig { dbar } => dbar,
                    _ => return Err(mismatch()),
                };
                check_b(b)?;
                check_condition(a)?;
                let inner = sigma * sigma + 4.0 * c * (c + sigma) * (b + 2.0) / a;
                let tail = 4.0 * (b + 2.0).powi(2) * (c + sigma).powi(2)
                    / (a * a * (2 * dbar + 1) as f64 * nf.powf(b));
                (k * k2 * inner, None, b * nf.ln(), k2 * inner * total_weight + tail)
            }
        };
        let corollary_remainder = (c == 0.0 && matches!(spec.mode, PenaltyMode::General { .. }))
            .then(|| k.powi(3) * k2 * sigma * sigma * total_weight / (k - 1.0).powi(2));
        Ok(Self {
            mode: spec.mode.name(),
            k,
            per_unit,
            multiplier: spec.multiplier,
            u,
            z,
            remainder,
            corollary_remainder,
        })
    }

    /// `pen(m)` for a model of dimension `dim` and weight `delta`.
    pub fn value(&self, dim: usize, delta: f64) -> f64 {
        self.multiplier * self.per_unit * (dim as f64 + delta)
    }

    /// `pen(m)` for every model of `coll`, in collection order.
    pub fn values(&self, coll: &ModelCollection) -> Vec<f64> {
        (0..coll.len())
            .map(|i| self.value(coll.dim(i), coll.models()[i].delta))
            .collect()
    }
}

/// `pen(m)` for model `idx` of `coll`.
pub fn penalty(spec: &PenaltySpec, noise: &NoiseSpec, coll: &ModelCollection, idx: usize) -> Result<f64> {
    let p = Penalty::calibrate(spec, noise, coll)?;
    Ok(p.value(coll.dim(idx), coll.models()[idx].delta))
}

/// `crit(m) = |Y − Π_{S_m} Y|₂² + pen(m)`, projecting onto `S_m` directly.
pub fn crit(coll: &ModelCollection, idx: usize, y: &[f64], pen: &Penalty) -> Result<f64> {
    let residual = match coll.space(idx)? {
        Some(s) => s.residual_sq(y)?,
        None => {
            if y.len() != coll.n() {
                return Err(Error::DimensionMismatch {
                    expected: coll.n(),
                    got: y.len(),
                });
            }
            crate::linspace::norm2_sq(y)
        }
    };
    Ok(residual + pen.value(coll.dim(idx), coll.models()[idx].delta))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCrit {
    pub id: String,
    pub residual_sq: f64,
    pub pen: f64,
    pub crit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub chosen_id: String,
    pub chosen_index: usize,
    /// `crit(m̂)`.
    pub crit: f64,
    pub per_model: Vec<ModelCrit>,
    /// Ids attaining the minimum, in collection order.
    pub ties: Vec<String>,
    pub fitted: Vec<f64>,
}

/// Index of the minimum with ties broken by smallest dimension, then
/// collection order; also returns every index attaining the minimum.
pub fn argmin_crit(crits: &[f64], dims: &[usize]) -> (usize, Vec<usize>) {
    let best = crits.iter().copied().fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = (0..crits.len()).filter(|&i| crits[i] == best).collect();
    let chosen = *ties
        .iter()
        .min_by_key(|&&i| (dims[i], i))
        .expect("nonempty collection");
    (chosen, ties)
}

/// Penalties and dimensions precomputed for repeated selection on one
/// collection.
#[derive(Debug, Clone)]
pub struct Selector<'a> {
    coll: &'a ModelCollection,
    penalty: Penalty,
    pens: Vec<f64>,
    dims: Vec<usize>,
}

impl<'a> Selector<'a> {
    pub fn new(coll: &'a ModelCollection, spec: &PenaltySpec, noise: &NoiseSpec) -> Result<Self> {
        let penalty = Penalty::calibrate(spec, noise, coll)?;
        Ok(Self::with_penalty(coll, penalty))
    }

    pub fn with_penalty(coll: &'a ModelCollection, penalty: Penalty) -> Self {
        let pens = penalty.values(coll);
        let dims = (0..coll.len()).map(|i| coll.dim(i)).collect();
        Self {
            coll,
            penalty,
            pens,
            dims,
        }
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    pub fn pens(&self) -> &[f64] {
        &self.pens
    }

    pub fn collection(&self) -> &ModelCollection {
        self.coll
    }

    /// `m̂` only; no per-model record is kept.
    pub fn select_index(&self, y: &[f64]) -> Result<usize> {
        let res = self.coll.residuals(y)?;
        let mut best = f64::INFINITY;
        let mut chosen = 0;
        for (i, (r, p)) in res.iter().zip(&self.pens).enumerate() {
            let c = r + p;
            if c < best || (c == best && self.dims[i] < self.dims[chosen]) {
                best = c;
                chosen = i;
            }
        }
        Ok(chosen)
    }

    pub fn select(&self, y: &[f64]) -> Result<SelectionResult> {
        let res = self.coll.residuals(y)?;
        let crits: Vec<f64> = res.iter().zip(&self.pens).map(|(r, p)| r + p).collect();
        let (chosen, ties) = argmin_crit(&crits, &self.dims);
        let models = self.coll.models();
        let per_model = (0..crits.len())
            .map(|i| ModelCrit {
                id: models[i].id.clone(),
                residual_sq: res[i],
                pen: self.pens[i],
                crit: crits[i],
            })
            .collect();
        Ok(SelectionResult {
            chosen_id: models[chosen].id.clone(),
            chosen_index: chosen,
            crit: crits[chosen],
            per_model,
            ties: ties.iter().map(|&i| models[i].id.clone()).collect(),
            fitted: self.coll.fit(chosen, y)?,
        })
    }
}

/// Minimizer of the penalized criterion over `coll`.
pub fn select_model(
    y: &[f64],
    coll: &ModelCollection,
    spec: &PenaltySpec,
    noise: &NoiseSpec,
) -> Result<SelectionResult> {
    Selector::new(coll, spec, noise)?.select(y)
}

/// `E|f − Π_S Y|₂² = |f − Π_S f|₂² + var(ξ₁)·dim S`; `None` is `S = {0}`.
pub fn exact_risk(f: &[f64], space: Option<&Subspace>, noise: &NoiseSpec) -> Result<f64> {
    match space {
        Some(s) => Ok(s.residual_sq(f)? + noise.variance() * s.dim() as f64),
        None => Ok(crate::linspace::norm2_sq(f)),
    }
}

/// [`exact_risk`] for every model of `coll`.
pub fn exact_risks(coll: &ModelCollection, f: &[f64], noise: &NoiseSpec) -> Result<Vec<f64>> {
    let var = noise.variance();
    Ok(coll
        .residuals(f)?
        .into_iter()
        .enumerate()
        .map(|(i, b)| b + var * coll.dim(i) as f64)
        .collect())
}

/// Right-hand sides of the risk bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRhs {
    pub c_k: f64,
    /// Model attaining `inf_m (E|f − f̂_m|² + pen(m))`.
    pub inf_index: usize,
    pub inf_id: String,
    pub inf_value: f64,
    pub remainder: f64,
    /// `C(K)[inf + R]`.
    pub bracketed: f64,
    /// `C(K)·inf + R'` with the `c = 0` remainder `R'`, when it applies.
    pub corollary: Option<f64>,
}

impl OracleRhs {
    /// Smallest of the reported variants; each is a valid bound.
    pub fn tightest(&self) -> f64 {
        self.corollary.map_or(self.bracketed, |c| c.min(self.bracketed))
    }

    /// Largest of the reported variants.
    pub fn loosest(&self) -> f64 {
        self.corollary.map_or(self.bracketed, |c| c.max(self.bracketed))
    }
}

pub fn oracle_rhs(coll: &ModelCollection, penalty: &Penalty, f: &[f64], noise: &NoiseSpec) -> Result<OracleRhs> {
    let risks = exact_risks(coll, f, noise)?;
    let pens = penalty.values(coll);
    let terms: Vec<f64> = risks.iter().zip(&pens).map(|(r, p)| r + p).collect();
    let dims: Vec<usize> = (0..coll.len()).map(|i| coll.dim(i)).collect();
    let (inf_index, _) = argmin_crit(&terms, &dims);
    let inf_value = terms[inf_index];
    let c_k = oracle_constant(penalty.k)?;
    Ok(OracleRhs {
        c_k,
        inf_index,
        inf_id: coll.models()[inf_index].id.clone(),
        inf_value,
        remainder: penalty.remainder,
        bracketed: c_k * (inf_value + penalty.remainder),
        corollary: penalty.corollary_remainder.map(|r| c_k * inf_value + r),
    })
}
