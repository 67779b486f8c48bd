//! Reaction networks: species, stoichiometry, rate laws, parameters, and
//! observables, plus the JSON document schema they load from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalContext, EvalError, EvalStack, ExprError, Expression, SymbolRef};

/// Names that cannot be declared as species or parameters.
pub const RESERVED_IDENTIFIERS: &[&str] = &["exp", "log", "min", "max"];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("`{name}` is declared as both a species and a parameter")]
    NamespaceCollision { name: String },
    #[error("`{name}` is a reserved identifier")]
    ReservedName { name: String },
    #[error("`{name}` is not a valid identifier")]
    InvalidName { name: String },
    #[error("model must declare at least one species and one reaction")]
    EmptyModel,
    #[error("reaction `{reaction}` has zero net stoichiometry")]
    ZeroStoichiometry { reaction: String },
    #[error("reaction `{reaction}` references unknown species `{species}`")]
    UnknownSpecies { reaction: String, species: String },
    #[error("species `{species}` has negative initial value {value}")]
    NegativeInitial { species: String, value: f64 },
    #[error("species `{species}` initial value {value} must be a nonnegative integer in a CTMC model")]
    NonIntegerInitial { species: String, value: f64 },
    #[error("in {location}: {source}")]
    Bind {
        location: String,
        source: ExprError,
    },
    #[error("mass-action rate constant of reaction `{reaction}` evaluates to {value} (must be nonnegative)")]
    NegativeKappa { reaction: String, value: f64 },
    #[error("evaluating rate constant of `{reaction}`: {source}")]
    KappaEval {
        reaction: String,
        source: EvalError,
    },
    #[error("observable `{name}` not declared")]
    UnknownObservable { name: String },
    #[error("parameter `{name}` not declared")]
    UnknownParameter { name: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Rate-evaluation failures during simulation.
#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum RateError {
    #[error("{0}")]
    Eval(#[from] EvalError),
    #[error("state coordinate {species} = {value} is too negative for rate evaluation")]
    NegativeState { species: usize, value: f64 },
    #[error("rate of reaction {reaction} is not finite")]
    NonFinite { reaction: usize },
    #[error("rate of reaction {reaction} evaluated to {value} (must be nonnegative)")]
    Negative { reaction: usize, value: f64 },
}

#[derive(Debug, Clone)]
pub struct Species {
    pub name: String,
    /// Copy number for CTMC models, level for reduced models.
    pub initial: f64,
}

#[derive(Debug, Clone)]
pub enum RateLaw {
    /// Stochastic mass action: `kappa * prod_i ff(x_i, nu_ik) / nu_ik!`.
    /// `kappa` is an expression over parameters only. `scale` is a fixed
    /// multiplier (1 for CTMC models; reduced models carry `N0^-beta_k`).
    MassAction { kappa: Expression, scale: f64 },
    /// Arbitrary formula over state and parameters.
    Custom { formula: Expression },
}

#[derive(Debug, Clone)]
pub struct Reaction {
    pub name: String,
    /// `(species index, multiplicity)`, sorted by species index.
    pub reactants: Vec<(usize, u32)>,
    pub products: Vec<(usize, u32)>,
    pub rate: RateLaw,
    /// Dense net change `nu' - nu`, length = species count.
    pub zeta: Vec<i64>,
    /// `prod_i 1/nu_ik!` for the mass-action denominator.
    pub inv_factorial: f64,
}

impl Reaction {
    /// Sorted indices of species whose value the rate reads (reactants for
    /// mass action, formula symbols for custom rates).
    pub fn rate_dependencies(&self) -> Vec<usize> {
        match &self.rate {
            RateLaw::MassAction { .. } => self.reactants.iter().map(|&(i, _)| i).collect(),
            RateLaw::Custom { formula } => formula.species_used().to_vec(),
        }
    }

    pub fn depends_on_param(&self, j: usize) -> bool {
        match &self.rate {
            RateLaw::MassAction { kappa, .. } => kappa.depends_on_param(j),
            RateLaw::Custom { formula } => formula.depends_on_param(j),
        }
    }
}

/// Dense stoichiometry matrix; column `k` is the net change of reaction `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoichiometryMatrix {
    pub n_species: usize,
    pub columns: Vec<Vec<i64>>,
}

#[derive(Debug, Clone)]
pub struct ReactionNetwork {
    pub species: Vec<Species>,
    pub reactions: Vec<Reaction>,
    pub param_names: Vec<String>,
    pub param_values: Vec<f64>,
    pub observables: Vec<(String, Expression)>,
}

impl ReactionNetwork {
    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.reactions.len()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|p| p == name)
    }

    pub fn observable(&self, name: &str) -> Result<&Expression, ModelError> {
        self.observables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| ModelError::UnknownObservable { name: name.into() })
    }

    /// Parameter vector with one entry replaced by name.
    pub fn params_with(&self, name: &str, value: f64) -> Result<Vec<f64>, ModelError> {
        let j = self
            .param_index(name)
            .ok_or_else(|| ModelError::UnknownParameter { name: name.into() })?;
        let mut p = self.param_values.clone();
        p[j] = value;
        Ok(p)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.initial).collect()
    }

    pub fn initial_copy_numbers(&self) -> Vec<i64> {
        self.species.iter().map(|s| s.initial.round() as i64).collect()
    }

    pub fn stoichiometry(&self) -> StoichiometryMatrix {
        StoichiometryMatrix {
            n_species: self.n_species(),
            columns: self.reactions.iter().map(|r| r.zeta.clone()).collect(),
        }
    }

    /// Propensity of reaction `k` at a copy-number state (given as reals).
    pub fn propensity(
        &self,
        k: usize,
        state: &[f64],
        params: &[f64],
        stack: &mut EvalStack,
    ) -> Result<f64, RateError> {
        let r = &self.reactions[k];
        let ctx = EvalContext { state, params };
        let v = match &r.rate {
            RateLaw::MassAction { kappa, scale } => {
                let kappa = kappa.eval(ctx, stack)?;
                kappa * scale * mass_action_factor(r, state)
            }
            RateLaw::Custom { formula } => formula.eval(ctx, stack)?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(RateError::NonFinite { reaction: k })
        }
    }

    pub fn observable_eval(
        &self,
        name: &str,
        state: &[f64],
        params: &[f64],
    ) -> Result<f64, ModelError> {
        let e = self.observable(name)?;
        let mut stack = EvalStack::new();
        e.eval(EvalContext { state, params }, &mut stack)
            .map_err(|source| ModelError::KappaEval {
                reaction: format!("observable {name}"),
                source,
            })
    }

    /// Gradient of an observable over the given (continuous) coordinates.
    pub fn observable_gradient(
        &self,
        name: &str,
        state: &[f64],
        params: &[f64],
        coords: &[usize],
    ) -> Result<Vec<f64>, ModelError> {
        let e = self.observable(name)?;
        let mut stack = EvalStack::new();
        let ctx = EvalContext { state, params };
        let mut grad = Vec::with_capacity(coords.len());
        for &i in coords {
            let d = if e.depends_on_species(i) {
                e.derivative(ctx, SymbolRef::Species(i), &mut stack)
                    .map_err(|source| ModelError::KappaEval {
                        reaction: format!("observable {name}"),
                        source,
                    })?
            } else {
                0.0
            };
            grad.push(d);
        }
        Ok(grad)
    }

    pub fn species_names(&self) -> Vec<&str> {
        self.species.iter().map(|s| s.name.as_str()).collect()
    }
}

#[inline]
pub(crate) fn mass_action_factor(r: &Reaction, state: &[f64]) -> f64 {
    let mut acc = r.inv_factorial;
    for &(i, nu) in &r.reactants {
        let x = state[i];
        for m in 0..nu {
            acc *= x - f64::from(m);
        }
    }
    acc
}

/// Caches per-path constants (mass-action rate constants) so the hot loop
/// avoids re-evaluating parameter-only expressions.
#[derive(Debug)]
pub struct PropensityEvaluator<'a> {
    net: &'a ReactionNetwork,
    kappa_scaled: Vec<f64>,
    stack: EvalStack,
}

impl<'a> PropensityEvaluator<'a> {
    pub fn new(net: &'a ReactionNetwork, params: &[f64]) -> Result<Self, RateError> {
        let mut stack = EvalStack::new();
        let mut kappa_scaled = vec![0.0; net.n_reactions()];
        for (k, r) in net.reactions.iter().enumerate() {
            if let RateLaw::MassAction { kappa, scale } = &r.rate {
                let ctx = EvalContext {
                    state: &[],
                    params,
                };
                kappa_scaled[k] = kappa.eval(ctx, &mut stack)? * scale;
            }
        }
        Ok(PropensityEvaluator {
            net,
            kappa_scaled,
            stack,
        })
    }

    #[inline]
    pub fn rate(&mut self, k: usize, state: &[f64], params: &[f64]) -> Result<f64, RateError> {
        let r = &self.net.reactions[k];
        let v = match &r.rate {
            RateLaw::MassAction { .. } => self.kappa_scaled[k] * mass_action_factor(r, state),
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
}

// ---------------------------------------------------------------------------
// JSON document schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Ctmc,
    Pdmp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesDoc {
    pub name: String,
    pub initial: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum RateDoc {
    #[serde(rename = "mass_action")]
    MassAction {
        kappa: String,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        scale: f64,
    },
    #[serde(rename = "expr")]
    Expr { formula: String },
}

fn one() -> f64 {
    1.0
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_one(x: &f64) -> bool {
    *x == 1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionDoc {
    pub name: String,
    #[serde(default)]
    pub reactants: BTreeMap<String, u32>,
    #[serde(default)]
    pub products: BTreeMap<String, u32>,
    pub rate: RateDoc,
}

/// On-disk model document. CTMC models use the base fields; reduced (PDMP)
/// documents additionally set `kind: "pdmp"` and the partition fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default)]
    pub kind: ModelKind,
    pub species: Vec<SpeciesDoc>,
    pub reactions: Vec<ReactionDoc>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub observables: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous_species: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete_species: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous_reactions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete_reactions: Option<Vec<String>>,
}

impl ModelDocument {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model documents serialize")
    }
}

fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Load and fully validate a network from a parsed document.
pub fn load_model(doc: &ModelDocument) -> Result<ReactionNetwork, ModelError> {
    if doc.species.is_empty() || doc.reactions.is_empty() {
        return Err(ModelError::EmptyModel);
    }

    let mut seen = std::collections::BTreeSet::new();
    for s in &doc.species {
        if !valid_identifier(&s.name) {
            return Err(ModelError::InvalidName { name: s.name.clone() });
        }
        if RESERVED_IDENTIFIERS.contains(&s.name.as_str()) {
            return Err(ModelError::ReservedName { name: s.name.clone() });
        }
        if !seen.insert(s.name.clone()) {
            return Err(ModelError::DuplicateName {
                kind: "species",
                name: s.name.clone(),
            });
        }
        if s.initial < 0.0 {
            return Err(ModelError::NegativeInitial {
                species: s.name.clone(),
                value: s.initial,
            });
        }
        if doc.kind == ModelKind::Ctmc && s.initial.fract() != 0.0 {
            return Err(ModelError::NonIntegerInitial {
                species: s.name.clone(),
                value: s.initial,
            });
        }
    }
    for name in doc.parameters.keys() {
        if !valid_identifier(name) {
            return Err(ModelError::InvalidName { name: name.clone() });
        }
        if RESERVED_IDENTIFIERS.contains(&name.as_str()) {
            return Err(ModelError::ReservedName { name: name.clone() });
        }
        if seen.contains(name) {
            return Err(ModelError::NamespaceCollision { name: name.clone() });
        }
    }
    let mut reaction_names = std::collections::BTreeSet::new();
    for r in &doc.reactions {
        if !reaction_names.insert(r.name.clone()) {
            return Err(ModelError::DuplicateName {
                kind: "reaction",
                name: r.name.clone(),
            });
        }
    }

    let species: Vec<Species> = doc
        .species
        .iter()
        .map(|s| Species {
            name: s.name.clone(),
            initial: s.initial,
        })
        .collect();
    let species_names: Vec<&str> = species.iter().map(|s| s.name.as_str()).collect();
    let param_names: Vec<String> = doc.parameters.keys().cloned().collect();
    let param_values: Vec<f64> = doc.parameters.values().copied().collect();
    let param_refs: Vec<&str> = param_names.iter().map(|p| p.as_str()).collect();

    let n = species.len();
    let mut reactions = Vec::with_capacity(doc.reactions.len());
    for rdoc in &doc.reactions {
        let resolve = |side: &BTreeMap<String, u32>| -> Result<Vec<(usize, u32)>, ModelError> {
            let mut out = Vec::with_capacity(side.len());
            for (name, &mult) in side {
                if mult == 0 {
                    continue;
                }
                let i = species_names
                    .iter()
                    .position(|s| *s == name)
                    .ok_or_else(|| ModelError::UnknownSpecies {
                        reaction: rdoc.name.clone(),
                        species: name.clone(),
                    })?;
                out.push((i, mult));
            }
            out.sort_unstable_by_key(|&(i, _)| i);
            Ok(out)
        };
        let reactants = resolve(&rdoc.reactants)?;
        let products = resolve(&rdoc.products)?;

        let mut zeta = vec![0i64; n];
        for &(i, m) in &reactants {
            zeta[i] -= i64::from(m);
        }
        for &(i, m) in &products {
            zeta[i] += i64::from(m);
        }
        if zeta.iter().all(|&z| z == 0) {
            return Err(ModelError::ZeroStoichiometry {
                reaction: rdoc.name.clone(),
            });
        }

        let rate = match &rdoc.rate {
            RateDoc::MassAction { kappa, scale } => {
                let kappa_expr =
                    Expression::parse(kappa, &[], &param_refs).map_err(|source| ModelError::Bind {
                        location: format!("rate constant of reaction `{}`", rdoc.name),
                        source,
                    })?;
                let mut stack = EvalStack::new();
                let v = kappa_expr
                    .eval(
                        EvalContext {
                            state: &[],
                            params: &param_values,
                        },
                        &mut stack,
                    )
                    .map_err(|source| ModelError::KappaEval {
                        reaction: rdoc.name.clone(),
                        source,
                    })?;
                if v < 0.0 {
                    return Err(ModelError::NegativeKappa {
                        reaction: rdoc.name.clone(),
                        value: v,
                    });
                }
                RateLaw::MassAction {
                    kappa: kappa_expr,
                    scale: *scale,
                }
            }
            RateDoc::Expr { formula } => {
                let formula = Expression::parse(formula, &species_names, &param_refs).map_err(
                    |source| ModelError::Bind {
                        location: format!("rate formula of reaction `{}`", rdoc.name),
                        source,
                    },
                )?;
                RateLaw::Custom { formula }
            }
        };

        let inv_factorial = reactants
            .iter()
            .map(|&(_, nu)| 1.0 / (1..=u64::from(nu)).product::<u64>() as f64)
            .product();

        reactions.push(Reaction {
            name: rdoc.name.clone(),
            reactants,
            products,
            rate,
            zeta,
            inv_factorial,
        });
    }

    let mut observables = Vec::with_capacity(doc.observables.len());
    for (name, text) in &doc.observables {
        let e = Expression::parse(text, &species_names, &param_refs).map_err(|source| {
            ModelError::Bind {
                location: format!("observable `{name}`"),
                source,
            }
        })?;
        observables.push((name.clone(), e));
    }

    Ok(ReactionNetwork {
        species,
        reactions,
        param_names,
        param_values,
        observables,
    })
}

/// Load a CTMC network from a file path, rejecting `kind: "pdmp"` documents.
pub fn load_ctmc_model(path: &Path) -> Result<ReactionNetwork, ModelError> {
    let doc = ModelDocument::from_path(path)?;
    if doc.kind != ModelKind::Ctmc {
        return Err(ModelError::Schema(format!(
            "{} is a reduced (pdmp) model; a CTMC model is required here",
            path.display()
        )));
    }
    load_model(&doc)
}

/// Human-readable validation summary used by the CLI.
pub fn describe(net: &ReactionNetwork) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} reactions, {} species, {} parameters, {} observables",
        net.n_reactions(),
        net.n_species(),
        net.param_names.len(),
        net.observables.len()
    );
    s
}
