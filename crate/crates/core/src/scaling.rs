//! Multiscale scaling analysis: reaction/species timescales, classification
//! into continuous and discrete sets, stoichiometry truncation, and
//! derivation of the reduced hybrid (PDMP) model.
//!
//! All exponent arithmetic is exact over `i64` rationals so the
//! discrete/continuous split (`gamma + rho_k == 0`) never depends on
//! floating-point rounding.

use std::collections::BTreeMap;
use std::path::Path;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalContext, EvalStack, ExprError, Expression, SymbolRef};
use crate::model::{
    load_model, ModelDocument, ModelError, ModelKind, RateDoc, RateError, RateLaw, ReactionDoc,
    ReactionNetwork, Species, SpeciesDoc,
};

pub type Rat = Ratio<i64>;

/// Name of the reference-scale parameter. When a model declares a parameter
/// with this name, scaled-propensity evaluations at scale `N` substitute it,
/// which is what lets one model file serve a whole convergence study.
pub const SCALE_PARAM: &str = "N0";

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("cannot parse `{text}` as a rational (expected `p` or `p/q`)")]
    BadRational { text: String },
    #[error("scaling must cover every {kind}; missing `{name}`")]
    MissingEntry { kind: &'static str, name: String },
    #[error("scaling mentions unknown {kind} `{name}`")]
    UnknownEntry { kind: &'static str, name: String },
    #[error("abundance factor for species `{species}` must be nonnegative")]
    NegativeAlpha { species: String },
    #[error("reference scale N0 = {value} must exceed 1")]
    BadReferenceScale { value: f64 },
    #[error("no species is changed by any reaction; timescales are undefined")]
    NoSpeciesTouched,
    #[error(
        "fast reactions act on species below their timescale: {details}; \
         eliminate them with a quasi-stationary reduction and re-run on the reduced model"
    )]
    QsaRequired { reactions: Vec<String>, details: String },
    #[error("reaction `{reaction}` has a custom rate law; supply a reduced formula for it in the scaling file")]
    MissingReducedFormula { reaction: String },
    #[error("reaction `{reaction}` has a custom rate law; scaled mass-action evaluation is unavailable for it")]
    CustomRateUnsupported { reaction: String },
    #[error("in {location}: {source}")]
    Bind { location: String, source: ExprError },
    #[error("evaluating rate constant of `{reaction}`: {source}")]
    RateEval { reaction: String, source: RateError },
    #[error("discrete species `{species}` has non-integer initial value {value}")]
    NonIntegerDiscreteInitial { species: String, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn parse_rational(text: &str) -> Result<Rat, ScalingError> {
    let bad = || ScalingError::BadRational { text: text.into() };
    let t = text.trim();
    let (num, den) = match t.split_once('/') {
        Some((n, d)) => (n.trim(), Some(d.trim())),
        None => (t, None),
    };
    let n: i64 = num.parse().map_err(|_| bad())?;
    let d: i64 = match den {
        Some(d) => d.parse().map_err(|_| bad())?,
        None => 1,
    };
    if d == 0 {
        return Err(bad());
    }
    Ok(Rat::new(n, d))
}

pub fn rational_to_string(r: Rat) -> String {
    if r.denom() == &1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Observation timescale choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaSpec {
    /// Use the fastest species timescale `r`.
    Auto,
    Explicit(Rat),
}

/// Scaling exponents bound to a network (entries aligned with declaration
/// order).
#[derive(Debug, Clone)]
pub struct ScalingSpec {
    pub alpha: Vec<Rat>,
    pub beta: Vec<Rat>,
    pub n0: f64,
    pub gamma: GammaSpec,
    pub reduced_formulas: BTreeMap<String, String>,
}

/// On-disk scaling document; rationals are strings parsed exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingDocument {
    pub alpha: BTreeMap<String, String>,
    pub beta: BTreeMap<String, String>,
    #[serde(rename = "N0")]
    pub n0: f64,
    pub gamma: String,
    #[serde(default)]
    pub reduced_formulas: BTreeMap<String, String>,
}

impl ScalingDocument {
    pub fn from_json(text: &str) -> Result<Self, ScalingError> {
        serde_json::from_str(text).map_err(|e| ScalingError::Schema(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ScalingError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// Validate a scaling document against a network and bind it.
pub fn bind_scaling(doc: &ScalingDocument, net: &ReactionNetwork) -> Result<ScalingSpec, ScalingError> {
    if doc.n0 <= 1.0 || doc.n0.is_nan() {
        return Err(ScalingError::BadReferenceScale { value: doc.n0 });
    }
    for name in doc.alpha.keys() {
        if net.species_index(name).is_none() {
            return Err(ScalingError::UnknownEntry {
                kind: "species",
                name: name.clone(),
            });
        }
    }
    for name in doc.beta.keys() {
        if !net.reactions.iter().any(|r| &r.name == name) {
            return Err(ScalingError::UnknownEntry {
                kind: "reaction",
                name: name.clone(),
            });
        }
    }
    let mut alpha = Vec::with_capacity(net.n_species());
    for s in &net.species {
        let text = doc.alpha.get(&s.name).ok_or_else(|| ScalingError::MissingEntry {
            kind: "species",
            name: s.name.clone(),
        })?;
        let a = parse_rational(text)?;
        if a.is_negative() {
            return Err(ScalingError::NegativeAlpha {
                species: s.name.clone(),
            });
        }
        alpha.push(a);
    }
    let mut beta = Vec::with_capacity(net.n_reactions());
    for r in &net.reactions {
        let text = doc.beta.get(&r.name).ok_or_else(|| ScalingError::MissingEntry {
            kind: "reaction",
            name: r.name.clone(),
        })?;
        beta.push(parse_rational(text)?);
    }
    let gamma = if doc.gamma.trim() == "auto" {
        GammaSpec::Auto
    } else {
        GammaSpec::Explicit(parse_rational(&doc.gamma)?)
    };
    Ok(ScalingSpec {
        alpha,
        beta,
        n0: doc.n0,
        gamma,
        reduced_formulas: doc.reduced_formulas.clone(),
    })
}

/// Natural timescale of each reaction: `rho_k = beta_k + <alpha, nu_k>`.
pub fn natural_timescales(net: &ReactionNetwork, spec: &ScalingSpec) -> Vec<Rat> {
    net.reactions
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let mut rho = spec.beta[k];
            for &(i, nu) in &r.reactants {
                rho += spec.alpha[i] * Rat::from_integer(i64::from(nu));
            }
            rho
        })
        .collect()
}

/// Per-species timescales `gamma_i = alpha_i - max{rho_k : zeta_ik != 0}`
/// (`None` for species no reaction changes) and the fastest timescale `r`.
pub fn species_timescales_and_r(
    net: &ReactionNetwork,
    spec: &ScalingSpec,
    rho: &[Rat],
) -> Result<(Vec<Option<Rat>>, Rat), ScalingError> {
    let mut gammas: Vec<Option<Rat>> = vec![None; net.n_species()];
    for (i, g) in gammas.iter_mut().enumerate() {
        let mut max_rho: Option<Rat> = None;
        for (k, r) in net.reactions.iter().enumerate() {
            if r.zeta[i] != 0 {
                max_rho = Some(match max_rho {
                    Some(m) if m >= rho[k] => m,
                    _ => rho[k],
                });
            }
        }
        *g = max_rho.map(|m| spec.alpha[i] - m);
    }
    let r = gammas
        .iter()
        .flatten()
        .copied()
        .min()
        .ok_or(ScalingError::NoSpeciesTouched)?;
    Ok((gammas, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReactionClass {
    Continuous,
    Discrete,
    Dropped,
}

/// Result of the timescale analysis on one network + scaling choice.
#[derive(Debug, Clone)]
pub struct TimescaleReport {
    pub rho: Vec<Rat>,
    pub gamma_species: Vec<Option<Rat>>,
    pub r: Rat,
    /// Observation timescale actually used (`r` when gamma = auto).
    pub gamma_obs: Rat,
    pub classification: Vec<ReactionClass>,
    /// Truncated stoichiometry, column per reaction.
    pub zeta_hat: Vec<Vec<i64>>,
    /// Reactions whose firing moves some species faster than its abundance
    /// scale: `(reaction index, offending species indices)`.
    pub qsa_violations: Vec<(usize, Vec<usize>)>,
}

/// Classify reactions at the observation timescale and truncate
/// stoichiometries: keep `zeta_ik` only where `alpha_i = gamma + rho_k`.
pub fn classify_and_truncate(
    net: &ReactionNetwork,
    spec: &ScalingSpec,
    rho: &[Rat],
    gamma_species: &[Option<Rat>],
    r: Rat,
) -> TimescaleReport {
    let gamma_obs = match spec.gamma {
        GammaSpec::Auto => r,
        GammaSpec::Explicit(g) => g,
    };
    let mut classification = Vec::with_capacity(net.n_reactions());
    let mut zeta_hat = Vec::with_capacity(net.n_reactions());
    let mut qsa_violations = Vec::new();
    for (k, reaction) in net.reactions.iter().enumerate() {
        let speed = gamma_obs + rho[k];
        let class = if speed.is_zero() {
            ReactionClass::Discrete
        } else if speed > Rat::zero() {
            ReactionClass::Continuous
        } else {
            ReactionClass::Dropped
        };
        classification.push(class);
        let mut col = vec![0i64; net.n_species()];
        if class != ReactionClass::Dropped {
            let mut offending = Vec::new();
            for (i, &z) in reaction.zeta.iter().enumerate() {
                if z == 0 {
                    continue;
                }
                if spec.alpha[i] == speed {
                    col[i] = z;
                } else if spec.alpha[i] < speed {
                    offending.push(i);
                }
            }
            if !offending.is_empty() {
                qsa_violations.push((k, offending));
            }
        }
        zeta_hat.push(col);
    }
    TimescaleReport {
        rho: rho.to_vec(),
        gamma_species: gamma_species.to_vec(),
        r,
        gamma_obs,
        classification,
        zeta_hat,
        qsa_violations,
    }
}

/// Full analysis pipeline for one network + scaling.
pub fn analyze(net: &ReactionNetwork, spec: &ScalingSpec) -> Result<TimescaleReport, ScalingError> {
    let rho = natural_timescales(net, spec);
    let (gamma_species, r) = species_timescales_and_r(net, spec, &rho)?;
    Ok(classify_and_truncate(net, spec, &rho, &gamma_species, r))
}

/// Parameter vector with the reference-scale parameter (if declared) set to
/// `n`.
pub fn params_at_scale(net: &ReactionNetwork, params: &[f64], n: f64) -> Vec<f64> {
    let mut out = params.to_vec();
    if let Some(j) = net.param_index(SCALE_PARAM) {
        out[j] = n;
    }
    out
}

/// Pre-limit scaled mass-action propensity at scale `n`:
/// `kappa_k(n) * prod_i z_i (z_i - n^-a_i) ... (z_i - n^-a_i (nu_ik - 1)) / nu_ik!`
/// with `kappa_k(n) = kappa'_k(theta, N0 := n) * n^-beta_k`.
pub fn scaled_propensity(
    net: &ReactionNetwork,
    spec: &ScalingSpec,
    k: usize,
    z: &[f64],
    n: f64,
    params: &[f64],
) -> Result<f64, ScalingError> {
    let r = &net.reactions[k];
    let RateLaw::MassAction { kappa, .. } = &r.rate else {
        return Err(ScalingError::CustomRateUnsupported {
            reaction: r.name.clone(),
        });
    };
    let scaled_params = params_at_scale(net, params, n);
    let mut stack = EvalStack::new();
    let kappa_n = kappa
        .eval(
            EvalContext {
                state: &[],
                params: &scaled_params,
            },
            &mut stack,
        )
        .map_err(|source| ScalingError::RateEval {
            reaction: r.name.clone(),
            source: source.into(),
        })?
        * n.powf(-rat_f64(spec.beta[k]));
    let mut acc = kappa_n * r.inv_factorial;
    for &(i, nu) in &r.reactants {
        let step = n.powf(-rat_f64(spec.alpha[i]));
        for m in 0..nu {
            acc *= z[i] - f64::from(m) * step;
        }
    }
    Ok(acc)
}

/// Limit propensity value (the `n -> infinity` limit of [`scaled_propensity`]):
/// falling factorials on discrete coordinates, monomials on continuous ones.
pub fn limit_propensity_value(
    net: &ReactionNetwork,
    spec: &ScalingSpec,
    k: usize,
    z: &[f64],
    params: &[f64],
) -> Result<f64, ScalingError> {
    let r = &net.reactions[k];
    let RateLaw::MassAction { kappa, .. } = &r.rate else {
        return Err(ScalingError::CustomRateUnsupported {
            reaction: r.name.clone(),
        });
    };
    let mut stack = EvalStack::new();
    let kappa_v = kappa
        .eval(
            EvalContext {
                state: &[],
                params,
            },
            &mut stack,
        )
        .map_err(|source| ScalingError::RateEval {
            reaction: r.name.clone(),
            source: source.into(),
        })?
        * spec.n0.powf(-rat_f64(spec.beta[k]));
    let mut acc = kappa_v * r.inv_factorial;
    for &(i, nu) in &r.reactants {
        if spec.alpha[i].is_zero() {
            for m in 0..nu {
                acc *= z[i] - f64::from(m);
            }
        } else {
            acc *= z[i].powi(nu as i32);
        }
    }
    Ok(acc)
}

/// Convert an exact rational exponent to `f64` for numeric evaluation.
pub fn rat_f64(r: Rat) -> f64 {
    r.to_f64().expect("rational fits in f64")
}

// ---------------------------------------------------------------------------
// Reduced PDMP model
// ---------------------------------------------------------------------------

/// One retained reaction of the reduced model.
#[derive(Debug, Clone)]
pub struct PdmpReaction {
    pub name: String,
    pub class: ReactionClass,
    /// Mass-action rates are interpreted in the limit sense (falling
    /// factorials on discrete species, monomials on continuous species);
    /// the `scale` field carries `N0^-beta_k`.
    pub rate: RateLaw,
    pub reactants: Vec<(usize, u32)>,
    pub inv_factorial: f64,
    /// Truncated net change, full species length.
    pub zeta_hat: Vec<i64>,
}

/// The hybrid model: continuous species follow the rate field, discrete
/// species jump via time-changed unit Poisson clocks.
#[derive(Debug, Clone)]
pub struct ReducedPdmp {
    /// All species in original order; `initial` holds scaled levels for
    /// continuous species and copy numbers for discrete ones.
    pub species: Vec<Species>,
    pub param_names: Vec<String>,
    pub param_values: Vec<f64>,
    pub observables: Vec<(String, Expression)>,
    /// Species indices with positive abundance factor, ascending.
    pub continuous: Vec<usize>,
    /// Species indices with zero abundance factor, ascending.
    pub discrete: Vec<usize>,
    pub reactions: Vec<PdmpReaction>,
}

impl ReducedPdmp {
    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn continuous_reactions(&self) -> impl Iterator<Item = (usize, &PdmpReaction)> {
        self.reactions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.class == ReactionClass::Continuous)
    }

    pub fn discrete_reactions(&self) -> impl Iterator<Item = (usize, &PdmpReaction)> {
        self.reactions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.class == ReactionClass::Discrete)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.initial).collect()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|p| p == name)
    }

    pub fn params_with(&self, name: &str, value: f64) -> Result<Vec<f64>, ModelError> {
        let j = self
            .param_index(name)
            .ok_or_else(|| ModelError::UnknownParameter { name: name.into() })?;
        let mut p = self.param_values.clone();
        p[j] = value;
        Ok(p)
    }

    pub fn observable(&self, name: &str) -> Result<&Expression, ModelError> {
        self.observables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| ModelError::UnknownObservable { name: name.into() })
    }

    /// Serialize to a `kind: "pdmp"` model document.
    pub fn to_document(&self) -> ModelDocument {
        let species = self
            .species
            .iter()
            .map(|s| SpeciesDoc {
                name: s.name.clone(),
                initial: s.initial,
            })
            .collect();
        let reactions = self
            .reactions
            .iter()
            .map(|r| {
                let mut reactants = BTreeMap::new();
                for &(i, nu) in &r.reactants {
                    reactants.insert(self.species[i].name.clone(), nu);
                }
                let mut products = BTreeMap::new();
                for (i, &z) in r.zeta_hat.iter().enumerate() {
                    let nu = reactants.get(&self.species[i].name).copied().unwrap_or(0);
                    let prod = z + i64::from(nu);
                    if prod > 0 {
                        products.insert(self.species[i].name.clone(), prod as u32);
                    }
                }
                ReactionDoc {
                    name: r.name.clone(),
                    reactants,
                    products,
                    rate: match &r.rate {
                        RateLaw::MassAction { kappa, scale } => RateDoc::MassAction {
                            kappa: kappa.source().to_owned(),
                            scale: *scale,
                        },
                        RateLaw::Custom { formula } => RateDoc::Expr {
                            formula: formula.source().to_owned(),
                        },
                    },
                }
            })
            .collect();
        ModelDocument {
            kind: ModelKind::Pdmp,
            species,
            reactions,
            parameters: self
                .param_names
                .iter()
                .cloned()
                .zip(self.param_values.iter().copied())
                .collect(),
            observables: self
                .observables
                .iter()
                .map(|(n, e)| (n.clone(), e.source().to_owned()))
                .collect(),
            continuous_species: Some(
                self.continuous
                    .iter()
                    .map(|&i| self.species[i].name.clone())
                    .collect(),
            ),
            discrete_species: Some(
                self.discrete
                    .iter()
                    .map(|&i| self.species[i].name.clone())
                    .collect(),
            ),
            continuous_reactions: Some(
                self.continuous_reactions()
                    .map(|(_, r)| r.name.clone())
                    .collect(),
            ),
            discrete_reactions: Some(
                self.discrete_reactions()
                    .map(|(_, r)| r.name.clone())
                    .collect(),
            ),
        }
    }

    /// Load a reduced model from a `kind: "pdmp"` document.
    pub fn from_document(doc: &ModelDocument) -> Result<Self, ScalingError> {
        if doc.kind != ModelKind::Pdmp {
            return Err(ScalingError::Schema(
                "document is not a reduced model (kind != pdmp)".into(),
            ));
        }
        let base = load_model(doc)?;
        let names = |field: &Option<Vec<String>>, what: &str| -> Result<Vec<String>, ScalingError> {
            field
                .clone()
                .ok_or_else(|| ScalingError::Schema(format!("pdmp document missing `{what}`")))
        };
        let cont_names = names(&doc.continuous_species, "continuous_species")?;
        let disc_names = names(&doc.discrete_species, "discrete_species")?;
        let cont_rx = names(&doc.continuous_reactions, "continuous_reactions")?;
        let disc_rx = names(&doc.discrete_reactions, "discrete_reactions")?;

        let mut continuous = Vec::new();
        for n in &cont_names {
            continuous.push(base.species_index(n).ok_or_else(|| {
                ScalingError::Schema(format!("continuous_species lists unknown species `{n}`"))
            })?);
        }
        let mut discrete = Vec::new();
        for n in &disc_names {
            discrete.push(base.species_index(n).ok_or_else(|| {
                ScalingError::Schema(format!("discrete_species lists unknown species `{n}`"))
            })?);
        }
        continuous.sort_unstable();
        discrete.sort_unstable();
        let mut all: Vec<usize> = continuous.iter().chain(discrete.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        if all.len() != base.n_species() {
            return Err(ScalingError::Schema(
                "continuous_species and discrete_species must partition the species".into(),
            ));
        }
        for &i in &discrete {
            let s = &base.species[i];
            if s.initial.fract() != 0.0 {
                return Err(ScalingError::NonIntegerDiscreteInitial {
                    species: s.name.clone(),
                    value: s.initial,
                });
            }
        }

        let mut reactions = Vec::with_capacity(base.reactions.len());
        for r in &base.reactions {
            let class = if cont_rx.contains(&r.name) {
                ReactionClass::Continuous
            } else if disc_rx.contains(&r.name) {
                ReactionClass::Discrete
            } else {
                return Err(ScalingError::Schema(format!(
                    "reaction `{}` is in neither continuous_reactions nor discrete_reactions",
                    r.name
                )));
            };
            for &i in &discrete {
                if class == ReactionClass::Continuous && r.zeta[i] != 0 {
                    return Err(ScalingError::Schema(format!(
                        "continuous reaction `{}` changes discrete species `{}`",
                        r.name, base.species[i].name
                    )));
                }
            }
            reactions.push(PdmpReaction {
                name: r.name.clone(),
                class,
                rate: r.rate.clone(),
                reactants: r.reactants.clone(),
                inv_factorial: r.inv_factorial,
                zeta_hat: r.zeta.clone(),
            });
        }

        Ok(ReducedPdmp {
            species: base.species,
            param_names: base.param_names,
            param_values: base.param_values,
            observables: base.observables,
            continuous,
            discrete,
            reactions,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ScalingError> {
        let doc = ModelDocument::from_path(path)?;
        Self::from_document(&doc)
    }
}

/// Derive the reduced PDMP from a CTMC network and a scaling choice.
///
/// Fails when a fast reaction still acts on a slower species (quasi-
/// stationary elimination has to happen first) or when a retained custom
/// reaction has no user-supplied reduced formula.
pub fn derive_reduced_model(
    net: &ReactionNetwork,
    spec: &ScalingSpec,
) -> Result<(ReducedPdmp, TimescaleReport), ScalingError> {
    let report = analyze(net, spec)?;
    if !report.qsa_violations.is_empty() {
        let reactions: Vec<String> = report
            .qsa_violations
            .iter()
            .map(|(k, _)| net.reactions[*k].name.clone())
            .collect();
        let details = report
            .qsa_violations
            .iter()
            .map(|(k, speciess)| {
                let names: Vec<&str> = speciess
                    .iter()
                    .map(|&i| net.species[i].name.as_str())
                    .collect();
                format!(
                    "`{}` (timescale {}) moves {}",
                    net.reactions[*k].name,
                    rational_to_string(report.gamma_obs + report.rho[*k]),
                    names.join(", ")
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        return Err(ScalingError::QsaRequired { reactions, details });
    }

    let continuous: Vec<usize> = (0..net.n_species())
        .filter(|&i| spec.alpha[i] > Rat::zero())
        .collect();
    let discrete: Vec<usize> = (0..net.n_species())
        .filter(|&i| spec.alpha[i].is_zero())
        .collect();

    let species_names: Vec<&str> = net.species.iter().map(|s| s.name.as_str()).collect();
    let param_refs: Vec<&str> = net.param_names.iter().map(|p| p.as_str()).collect();

    let mut reactions = Vec::new();
    for (k, r) in net.reactions.iter().enumerate() {
        let class = report.classification[k];
        if class == ReactionClass::Dropped {
            continue;
        }
        let rate = match &r.rate {
            RateLaw::MassAction { kappa, scale } => RateLaw::MassAction {
                kappa: kappa.clone(),
                scale: scale * spec.n0.powf(-rat_f64(spec.beta[k])),
            },
            RateLaw::Custom { .. } => {
                let text = spec.reduced_formulas.get(&r.name).ok_or_else(|| {
                    ScalingError::MissingReducedFormula {
                        reaction: r.name.clone(),
                    }
                })?;
                let formula = Expression::parse(text, &species_names, &param_refs).map_err(
                    |source| ScalingError::Bind {
                        location: format!("reduced formula for `{}`", r.name),
                        source,
                    },
                )?;
                RateLaw::Custom { formula }
            }
        };
        let zeta_hat = report.zeta_hat[k].clone();
        if zeta_hat.iter().all(|&z| z == 0) {
            // truncation removed every component: the reaction has no effect
            // in the limit model
            continue;
        }
        if class == ReactionClass::Continuous {
            debug_assert!(
                discrete.iter().all(|&i| zeta_hat[i] == 0),
                "truncation must zero discrete components of continuous reactions"
            );
        }
        reactions.push(PdmpReaction {
            name: r.name.clone(),
            class,
            rate,
            reactants: r.reactants.clone(),
            inv_factorial: r.inv_factorial,
            zeta_hat,
        });
    }

    let species = net
        .species
        .iter()
        .enumerate()
        .map(|(i, s)| Species {
            name: s.name.clone(),
            initial: if spec.alpha[i].is_zero() {
                s.initial
            } else {
                s.initial * spec.n0.powf(-rat_f64(spec.alpha[i]))
            },
        })
        .collect();

    Ok((
        ReducedPdmp {
            species,
            param_names: net.param_names.clone(),
            param_values: net.param_values.clone(),
            observables: net.observables.clone(),
            continuous,
            discrete,
            reactions,
        },
        report,
    ))
}

// ---------------------------------------------------------------------------
// Hybrid rate evaluation
// ---------------------------------------------------------------------------

/// Evaluates reduced-model rates and their derivatives over the full hybrid
/// state vector (continuous levels and discrete counts side by side).
/// Caches parameter-only rate constants; one instance per simulation path.
#[derive(Debug)]
pub struct PdmpRateEvaluator<'a> {
    model: &'a ReducedPdmp,
    kappa_scaled: Vec<f64>,
    is_continuous: Vec<bool>,
    stack: EvalStack,
}

impl<'a> PdmpRateEvaluator<'a> {
    pub fn new(model: &'a ReducedPdmp, params: &[f64]) -> Result<Self, RateError> {
        let mut stack = EvalStack::new();
        let mut kappa_scaled = vec![0.0; model.reactions.len()];
        for (k, r) in model.reactions.iter().enumerate() {
            if let RateLaw::MassAction { kappa, scale } = &r.rate {
                kappa_scaled[k] = kappa.eval(
                    EvalContext {
                        state: &[],
                        params,
                    },
                    &mut stack,
                )? * scale;
            }
        }
        let mut is_continuous = vec![false; model.n_species()];
        for &i in &model.continuous {
            is_continuous[i] = true;
        }
        Ok(PdmpRateEvaluator {
            model,
            kappa_scaled,
            is_continuous,
            stack,
        })
    }

    #[inline]
    fn limit_factor(&self, k: usize, state: &[f64]) -> f64 {
        let r = &self.model.reactions[k];
        let mut acc = r.inv_factorial;
        for &(i, nu) in &r.reactants {
            if self.is_continuous[i] {
                acc *= state[i].powi(nu as i32);
            } else {
                for m in 0..nu {
                    acc *= state[i] - f64::from(m);
                }
            }
        }
        acc
    }

    /// Limit propensity at the hybrid state.
    #[inline]
    pub fn rate(&mut self, k: usize, state: &[f64], params: &[f64]) -> Result<f64, RateError> {
        let r = &self.model.reactions[k];
        let v = match &r.rate {
            RateLaw::MassAction { .. } => self.kappa_scaled[k] * self.limit_factor(k, state),
            RateLaw::Custom { formula } => {
                formula.eval(EvalContext { state, params }, &mut self.stack)?
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(RateError::NonFinite { reaction: k })
        }
    }

    /// Partial derivative of the rate w.r.t. parameter `j` at fixed state.
    pub fn rate_dtheta(
        &mut self,
        k: usize,
        state: &[f64],
        params: &[f64],
        j: usize,
    ) -> Result<f64, RateError> {
        let r = &self.model.reactions[k];
        let v = match &r.rate {
            RateLaw::MassAction { kappa, scale } => {
                if !kappa.depends_on_param(j) {
                    return Ok(0.0);
                }
                let dk = kappa.derivative(
                    EvalContext {
                        state: &[],
                        params,
                    },
                    SymbolRef::Param(j),
                    &mut self.stack,
                )?;
                dk * scale * self.limit_factor(k, state)
            }
            RateLaw::Custom { formula } => {
                if !formula.depends_on_param(j) {
                    return Ok(0.0);
                }
                formula.derivative(EvalContext { state, params }, SymbolRef::Param(j), &mut self.stack)?
            }
        };
        Ok(v)
    }

    /// Gradient of the rate over the continuous coordinates, written into
    /// `grad` (length = number of continuous species).
    pub fn rate_grad(
        &mut self,
        k: usize,
        state: &[f64],
        params: &[f64],
        grad: &mut [f64],
    ) -> Result<(), RateError> {
        debug_assert_eq!(grad.len(), self.model.continuous.len());
        let r = &self.model.reactions[k];
        match &r.rate {
            RateLaw::MassAction { .. } => {
                let kappa = self.kappa_scaled[k];
                for (slot, &i) in self.model.continuous.iter().enumerate() {
                    let nu = r
                        .reactants
                        .iter()
                        .find(|&&(s, _)| s == i)
                        .map(|&(_, nu)| nu)
                        .unwrap_or(0);
                    if nu == 0 {
                        grad[slot] = 0.0;
                        continue;
                    }
                    // d/dx_i of the monomial factor times the other factors
                    let mut acc = kappa * r.inv_factorial * f64::from(nu) * state[i].powi(nu as i32 - 1);
                    for &(s, nu_s) in &r.reactants {
                        if s == i {
                            continue;
                        }
                        if self.is_continuous[s] {
                            acc *= state[s].powi(nu_s as i32);
                        } else {
                            for m in 0..nu_s {
                                acc *= state[s] - f64::from(m);
                            }
                        }
                    }
                    grad[slot] = acc;
                }
            }
            RateLaw::Custom { formula } => {
                for (slot, &i) in self.model.continuous.iter().enumerate() {
                    grad[slot] = if formula.depends_on_species(i) {
                        formula.derivative(
                            EvalContext { state, params },
                            SymbolRef::Species(i),
                            &mut self.stack,
                        )?
                    } else {
                        0.0
                    };
                }
            }
        }
        Ok(())
    }

    /// True when the rate reads any continuous coordinate (and so must be
    /// re-evaluated every Euler step rather than only after jumps).
    pub fn reads_continuous_state(&self, k: usize) -> bool {
        let r = &self.model.reactions[k];
        match &r.rate {
            RateLaw::MassAction { .. } => {
                r.reactants.iter().any(|&(i, _)| self.is_continuous[i])
            }
            RateLaw::Custom { formula } => formula
                .species_used()
                .iter()
                .any(|&i| self.is_continuous[i]),
        }
    }
}

/// Clamp small negative continuous coordinates produced by Euler undershoot;
/// anything below `-1e-9 * scale` is a real integration failure.
pub fn guard_nonnegative(state: &mut [f64], continuous: &[usize]) -> Result<(), RateError> {
    let mut scale = 1.0f64;
    for &i in continuous {
        scale = scale.max(state[i].abs());
    }
    for &i in continuous {
        if state[i] < 0.0 {
            if state[i] >= -1e-9 * scale {
                state[i] = 0.0;
            } else {
                return Err(RateError::NegativeState {
                    species: i,
                    value: state[i],
                });
            }
        }
    }
    Ok(())
}
