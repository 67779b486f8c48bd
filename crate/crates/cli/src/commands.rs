//! Implementations of the six subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hybridsens_core::model::{self, ModelDocument, ModelKind, ReactionNetwork};
use hybridsens_core::oracle::{self, TruncatedStateSpace};
use hybridsens_core::rng::RngStream;
use hybridsens_core::scaling::{
    self, analyze, bind_scaling, derive_reduced_model, rat_f64, rational_to_string, ReactionClass,
    ReducedPdmp, ScalingDocument, ScalingSpec, TimescaleReport,
};
use hybridsens_core::sensitivity::{
    cfd_ctmc, cfd_pdmp, ipa_ctmc, sens_pdmp_total, Method, ScaledView, SensOptions,
    SensitivityEstimate,
};
use hybridsens_core::simulate::{
    ctmc_campaign, pdmp_campaign, pdmp_simulate, ssa_on_grid, CampaignResult, CtmcMethod,
    StepConfig,
};
use hybridsens_core::stats::{integer_histogram, uniform_grid};

use crate::args::{
    CompareArgs, OracleArgs, RawFormat, ReduceArgs, SensArgs, SimulateArgs, SimulateMethod,
    ValidateArgs,
};
use crate::output::{csv_row, fmt_f64, header_comment, parse_csv, Manifest};

#[derive(Debug)]
pub enum CmdError {
    Usage(String),
    Validation(String),
    Numeric(String),
    Mismatch(String),
}

impl CmdError {
    pub fn code(&self) -> u8 {
        match self {
            CmdError::Usage(_) => 1,
            CmdError::Validation(_) => 2,
            CmdError::Numeric(_) => 3,
            CmdError::Mismatch(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Usage(m) | CmdError::Validation(m) | CmdError::Numeric(m)
            | CmdError::Mismatch(m) => m,
        }
    }
}

impl From<model::ModelError> for CmdError {
    fn from(e: model::ModelError) -> Self {
        CmdError::Validation(e.to_string())
    }
}

impl From<scaling::ScalingError> for CmdError {
    fn from(e: scaling::ScalingError) -> Self {
        CmdError::Validation(e.to_string())
    }
}

impl From<hybridsens_core::simulate::SimError> for CmdError {
    fn from(e: hybridsens_core::simulate::SimError) -> Self {
        CmdError::Numeric(e.to_string())
    }
}

impl From<hybridsens_core::sensitivity::SensError> for CmdError {
    fn from(e: hybridsens_core::sensitivity::SensError) -> Self {
        CmdError::Numeric(e.to_string())
    }
}

impl From<hybridsens_core::oracle::OracleError> for CmdError {
    fn from(e: hybridsens_core::oracle::OracleError) -> Self {
        CmdError::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Validation(format!("io error: {e}"))
    }
}

type CmdResult = Result<(), CmdError>;

fn load_document(path: &Path) -> Result<ModelDocument, CmdError> {
    ModelDocument::from_path(path)
        .map_err(|e| CmdError::Validation(format!("{}: {e}", path.display())))
}

fn load_scaling_for(
    path: &Path,
    net: &ReactionNetwork,
) -> Result<(ScalingDocument, ScalingSpec), CmdError> {
    let doc = ScalingDocument::from_path(path)
        .map_err(|e| CmdError::Validation(format!("{}: {e}", path.display())))?;
    let spec = bind_scaling(&doc, net)?;
    Ok((doc, spec))
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

pub fn cmd_validate(args: &ValidateArgs) -> CmdResult {
    let doc = load_document(&args.model)?;
    match doc.kind {
        ModelKind::Pdmp => {
            let pdmp = ReducedPdmp::from_document(&doc)?;
            println!(
                "ok: reduced model {}: {} reactions ({} continuous, {} discrete), {} species ({} continuous, {} discrete)",
                args.model.display(),
                pdmp.reactions.len(),
                pdmp.continuous_reactions().count(),
                pdmp.discrete_reactions().count(),
                pdmp.n_species(),
                pdmp.continuous.len(),
                pdmp.discrete.len(),
            );
            if args.scaling.is_some() {
                return Err(CmdError::Validation(
                    "scaling files apply to CTMC models, not reduced models".into(),
                ));
            }
        }
        ModelKind::Ctmc => {
            let net = model::load_model(&doc)?;
            print!("ok: model {}: {}", args.model.display(), model::describe(&net));
            if let Some(scaling_path) = &args.scaling {
                let (_, spec) = load_scaling_for(scaling_path, &net)?;
                let report = analyze(&net, &spec)?;
                println!(
                    "ok: scaling {}: binds; observation timescale gamma = {}",
                    scaling_path.display(),
                    rational_to_string(report.gamma_obs)
                );
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// reduce
// ---------------------------------------------------------------------------

fn report_text(net: &ReactionNetwork, report: &TimescaleReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "observation timescale gamma = {} (fastest species timescale r = {})",
        rational_to_string(report.gamma_obs),
        rational_to_string(report.r)
    );
    let _ = write!(s, "reaction timescales rho:");
    for (k, r) in net.reactions.iter().enumerate() {
        let _ = write!(s, " {}={}", r.name, rational_to_string(report.rho[k]));
    }
    let _ = writeln!(s);
    let _ = write!(s, "species timescales:");
    for (i, sp) in net.species.iter().enumerate() {
        match report.gamma_species[i] {
            Some(g) => {
                let _ = write!(s, " {}={}", sp.name, rational_to_string(g));
            }
            None => {
                let _ = write!(s, " {}=(untouched)", sp.name);
            }
        }
    }
    let _ = writeln!(s);
    for (class, label) in [
        (ReactionClass::Discrete, "discrete"),
        (ReactionClass::Continuous, "continuous"),
        (ReactionClass::Dropped, "dropped (limiting rate zero)"),
    ] {
        let members: Vec<&str> = report
            .classification
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == class)
            .map(|(k, _)| net.reactions[k].name.as_str())
            .collect();
        let _ = writeln!(s, "{label}: {{{}}}", members.join(", "));
    }
    for (k, r) in net.reactions.iter().enumerate() {
        if report.classification[k] == ReactionClass::Dropped {
            continue;
        }
        let zeroed: Vec<&str> = (0..net.n_species())
            .filter(|&i| r.zeta[i] != 0 && report.zeta_hat[k][i] == 0)
            .map(|i| net.species[i].name.as_str())
            .collect();
        if !zeroed.is_empty() {
            let _ = writeln!(
                s,
                "truncation: reaction {} no longer moves {{{}}} in the limit",
                r.name,
                zeroed.join(", ")
            );
        }
    }
    s
}

#[derive(serde::Serialize)]
struct ReportJson {
    gamma_obs: String,
    r: String,
    rho: BTreeMap<String, String>,
    species_timescales: BTreeMap<String, Option<String>>,
    classification: BTreeMap<String, String>,
    zeta_hat: BTreeMap<String, BTreeMap<String, i64>>,
}

fn report_json(net: &ReactionNetwork, report: &TimescaleReport) -> ReportJson {
    ReportJson {
        gamma_obs: rational_to_string(report.gamma_obs),
        r: rational_to_string(report.r),
        rho: net
            .reactions
            .iter()
            .enumerate()
            .map(|(k, r)| (r.name.clone(), rational_to_string(report.rho[k])))
            .collect(),
        species_timescales: net
            .species
            .iter()
            .enumerate()
            .map(|(i, sp)| {
                (
                    sp.name.clone(),
                    report.gamma_species[i].map(rational_to_string),
                )
            })
            .collect(),
        classification: net
            .reactions
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let c = match report.classification[k] {
                    ReactionClass::Continuous => "continuous",
                    ReactionClass::Discrete => "discrete",
                    ReactionClass::Dropped => "dropped",
                };
                (r.name.clone(), c.to_owned())
            })
            .collect(),
        zeta_hat: net
            .reactions
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let col: BTreeMap<String, i64> = net
                    .species
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| report.zeta_hat[k][*i] != 0)
                    .map(|(i, sp)| (sp.name.clone(), report.zeta_hat[k][i]))
                    .collect();
                (r.name.clone(), col)
            })
            .collect(),
    }
}

pub fn cmd_reduce(args: &ReduceArgs) -> CmdResult {
    let start = Instant::now();
    let doc = load_document(&args.model)?;
    if doc.kind != ModelKind::Ctmc {
        return Err(CmdError::Validation(
            "reduce expects a CTMC model file".into(),
        ));
    }
    let net = model::load_model(&doc)?;
    let (_, spec) = load_scaling_for(&args.scaling, &net)?;
    let (pdmp, report) = derive_reduced_model(&net, &spec)?;

    let out_doc = pdmp.to_document();
    std::fs::write(&args.out, out_doc.to_json_pretty() + "\n")?;
    let report_path = args.out.with_extension("report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report_json(&net, &report)).expect("report serializes") + "\n",
    )?;
    print!("{}", report_text(&net, &report));
    println!("reduced model written to {}", args.out.display());

    let mut manifest = Manifest::new("reduce", args.seed)
        .input("model", Some(&args.model))
        .input("scaling", Some(&args.scaling));
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.extra = serde_json::json!({ "report": report_path.display().to_string() });
    manifest.write(&args.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn write_summary_csv(
    out: &Path,
    seed: u64,
    species_names: &[&str],
    result: &CampaignResult,
) -> std::io::Result<()> {
    let mut text = header_comment(seed);
    let mut header = vec!["t".to_string()];
    for name in species_names {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_var"));
        header.push(format!("{name}_stderr"));
    }
    text.push_str(&csv_row(&header));
    for (g, &t) in result.grid.iter().enumerate() {
        let mut row = vec![fmt_f64(t)];
        for s in &result.stats[g] {
            row.push(fmt_f64(s.mean));
            row.push(fmt_f64(s.variance));
            row.push(fmt_f64(s.stderr));
        }
        text.push_str(&csv_row(&row));
    }
    std::fs::write(out, text)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let start = Instant::now();
    let doc = load_document(&args.model)?;
    let grid = uniform_grid(args.horizon, args.grid);
    let seed = args.seed;

    let method = match (&args.method, doc.kind) {
        (Some(m), _) => *m,
        (None, ModelKind::Pdmp) => SimulateMethod::Pdmp,
        (None, ModelKind::Ctmc) => SimulateMethod::Ssa,
    };

    let (species_names, result): (Vec<String>, CampaignResult) = match method {
        SimulateMethod::Pdmp => {
            if doc.kind != ModelKind::Pdmp {
                return Err(CmdError::Validation(
                    "method pdmp expects a reduced (kind: pdmp) model file".into(),
                ));
            }
            let pdmp = ReducedPdmp::from_document(&doc)?;
            let dt = args.dt.unwrap_or(args.horizon / 50_000.0);
            let mut cfg = StepConfig::new(dt, grid.clone());
            cfg.max_events = args.max_events;
            let names = pdmp.species.iter().map(|s| s.name.clone()).collect();
            let res = pdmp_campaign(
                &pdmp,
                &pdmp.param_values.clone(),
                args.horizon,
                &cfg,
                args.paths,
                seed,
            )?;
            if args.raw.is_some() {
                write_raw_pdmp(args, &pdmp, &cfg)?;
            }
            (names, res)
        }
        SimulateMethod::Ssa | SimulateMethod::Nrm | SimulateMethod::Scaled => {
            if doc.kind != ModelKind::Ctmc {
                return Err(CmdError::Validation(
                    "CTMC methods expect a CTMC model file".into(),
                ));
            }
            let net = model::load_model(&doc)?;
            let names: Vec<String> = net.species.iter().map(|s| s.name.clone()).collect();
            let res = match method {
                SimulateMethod::Scaled => {
                    let scaling_path = args.scaling.as_ref().ok_or_else(|| {
                        CmdError::Usage("method scaled requires --scaling".into())
                    })?;
                    let (_, spec) = load_scaling_for(scaling_path, &net)?;
                    let report = analyze(&net, &spec)?;
                    let gamma = rat_f64(report.gamma_obs);
                    let n = args.scale_n.unwrap_or(spec.n0);
                    let max_rho = report.rho.iter().copied().max();
                    if let Some(rho) = max_rho {
                        let expected = n.powf(gamma + rat_f64(rho)) * args.horizon;
                        if expected > args.event_warn_budget {
                            eprintln!(
                                "warning: expected event count ~{expected:.3e} exceeds budget {:.3e}",
                                args.event_warn_budget
                            );
                        }
                    }
                    ctmc_campaign(
                        &net,
                        Some((&spec, n, gamma)),
                        &net.param_values.clone(),
                        &grid,
                        args.paths,
                        seed,
                        args.max_events,
                        CtmcMethod::Scaled,
                    )?
                }
                SimulateMethod::Nrm => ctmc_campaign(
                    &net,
                    None,
                    &net.param_values.clone(),
                    &grid,
                    args.paths,
                    seed,
                    args.max_events,
                    CtmcMethod::NextReaction,
                )?,
                _ => ctmc_campaign(
                    &net,
                    None,
                    &net.param_values.clone(),
                    &grid,
                    args.paths,
                    seed,
                    args.max_events,
                    CtmcMethod::Direct,
                )?,
            };
            if args.raw.is_some() {
                write_raw_ctmc(args, &net, &grid, method)?;
            }
            (names, res)
        }
    };

    let name_refs: Vec<&str> = species_names.iter().map(|s| s.as_str()).collect();
    write_summary_csv(&args.out, seed, &name_refs, &result)?;

    if let Some(hist_species) = &args.histogram {
        let idx = species_names
            .iter()
            .position(|n| n == hist_species)
            .ok_or_else(|| {
                CmdError::Validation(format!("unknown species `{hist_species}` for --histogram"))
            })?;
        let hist = integer_histogram(result.final_states.iter().map(|s| s[idx]));
        let mut text = header_comment(seed);
        text.push_str(&csv_row(&["value".into(), "count".into()]));
        for (v, c) in &hist {
            text.push_str(&csv_row(&[v.to_string(), c.to_string()]));
        }
        let hist_path = hist_path_for(&args.out);
        std::fs::write(hist_path, text)?;
    }

    let mut manifest = Manifest::new("simulate", seed)
        .input("model", Some(&args.model))
        .input("scaling", args.scaling.as_deref());
    manifest.options = serde_json::json!({
        "method": format!("{method:?}").to_lowercase(),
        "paths": args.paths,
        "T": args.horizon,
        "dt": args.dt,
        "grid": args.grid,
    });
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.extra = serde_json::json!({ "events_total": result.n_events_total });
    manifest.write(&args.out)?;
    Ok(())
}

fn hist_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_stem().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".hist.csv");
    out.with_file_name(name)
}

/// Append one path's rows in the selected raw layout.
fn push_raw_rows(
    text: &mut String,
    format: RawFormat,
    path_id: usize,
    grid: &[f64],
    states: &[Vec<f64>],
) {
    match format {
        RawFormat::Long => {
            for (g, state) in states.iter().enumerate() {
                let mut row = vec![path_id.to_string(), fmt_f64(grid[g])];
                row.extend(state.iter().map(|&x| fmt_f64(x)));
                text.push_str(&csv_row(&row));
            }
        }
        RawFormat::Blocks => {
            if path_id > 0 {
                text.push('\n');
            }
            for (g, state) in states.iter().enumerate() {
                let mut row = vec![fmt_f64(grid[g])];
                row.extend(state.iter().map(|&x| fmt_f64(x)));
                text.push_str(&csv_row(&row));
            }
        }
    }
}

fn raw_header(format: RawFormat, species: &[String], seed: u64) -> String {
    let mut text = header_comment(seed);
    let mut header = Vec::new();
    if format == RawFormat::Long {
        header.push("path_id".to_string());
    }
    header.push("t".to_string());
    header.extend(species.iter().cloned());
    text.push_str(&csv_row(&header));
    text
}

fn write_raw_ctmc(
    args: &SimulateArgs,
    net: &ReactionNetwork,
    grid: &[f64],
    method: SimulateMethod,
) -> CmdResult {
    let raw_path = args.raw.as_ref().expect("raw path present");
    let names: Vec<String> = net.species.iter().map(|s| s.name.clone()).collect();
    let mut text = raw_header(args.raw_format, &names, args.seed);
    let x0 = net.initial_copy_numbers();
    for p in 0..args.paths {
        let mut rng = RngStream::new(args.seed, p as u64);
        let states = match method {
            SimulateMethod::Nrm => {
                let path = hybridsens_core::simulate::nrm_time_change(
                    net,
                    &net.param_values,
                    &x0,
                    grid.last().copied().unwrap_or(0.0),
                    &mut rng,
                    args.max_events,
                )?;
                hybridsens_core::simulate::sample_path_on_grid(&path, grid)
            }
            _ => {
                ssa_on_grid(net, &net.param_values, &x0, grid, &mut rng, args.max_events)?.states
            }
        };
        push_raw_rows(&mut text, args.raw_format, p, grid, &states);
    }
    std::fs::write(raw_path, text)?;
    Ok(())
}

fn write_raw_pdmp(args: &SimulateArgs, pdmp: &ReducedPdmp, cfg: &StepConfig) -> CmdResult {
    let raw_path = args.raw.as_ref().expect("raw path present");
    let names: Vec<String> = pdmp.species.iter().map(|s| s.name.clone()).collect();
    let mut text = raw_header(args.raw_format, &names, args.seed);
    for p in 0..args.paths {
        let mut rng = RngStream::new(args.seed, p as u64);
        let out = pdmp_simulate(pdmp, &pdmp.param_values, args.horizon, cfg, &mut rng)?;
        push_raw_rows(&mut text, args.raw_format, p, &out.grid, &out.states);
    }
    std::fs::write(raw_path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sens
// ---------------------------------------------------------------------------

pub fn cmd_sens(args: &SensArgs) -> CmdResult {
    let start = Instant::now();
    let doc = load_document(&args.model)?;
    let method: Method = args
        .method
        .parse()
        .map_err(|e: String| CmdError::Usage(e))?;
    let opts = SensOptions {
        paths: args.paths,
        h: args.h,
        central: args.central,
        aux_times: args.aux_times,
        aux_pairs: args.aux_pairs,
        seed: args.seed,
        aux_budget: args.aux_budget,
    };

    let mut rows: Vec<SensitivityEstimate> = Vec::new();
    match method {
        Method::PdmpDecomposition | Method::CfdPdmp => {
            if doc.kind != ModelKind::Pdmp {
                return Err(CmdError::Validation(format!(
                    "method {method} expects a reduced (kind: pdmp) model file"
                )));
            }
            let pdmp = ReducedPdmp::from_document(&doc)?;
            let dt = args.dt.unwrap_or(args.horizon / 50_000.0);
            let mut cfg = StepConfig::new(dt, Vec::new());
            cfg.max_events = args.max_events;
            for theta in &args.theta {
                if pdmp.param_index(theta).is_none() {
                    return Err(CmdError::Validation(format!(
                        "parameter `{theta}` not declared in the model"
                    )));
                }
                let est = match method {
                    Method::PdmpDecomposition => sens_pdmp_total(
                        &pdmp,
                        &args.observable,
                        theta,
                        args.horizon,
                        &cfg,
                        &opts,
                    )?,
                    _ => cfd_pdmp(&pdmp, &args.observable, theta, args.horizon, &cfg, &opts)?,
                };
                rows.push(est);
            }
        }
        Method::CfdCtmc | Method::IpaCtmc => {
            if doc.kind != ModelKind::Ctmc {
                return Err(CmdError::Validation(format!(
                    "method {method} expects a CTMC model file"
                )));
            }
            let net = model::load_model(&doc)?;
            let view = match &args.scaling {
                Some(path) => {
                    let (_, spec) = load_scaling_for(path, &net)?;
                    ScaledView::from_spec(&net, &spec)?
                }
                None => ScaledView::identity(net.n_species()),
            };
            for theta in &args.theta {
                if net.param_index(theta).is_none() {
                    return Err(CmdError::Validation(format!(
                        "parameter `{theta}` not declared in the model"
                    )));
                }
                let est = match method {
                    Method::CfdCtmc => cfd_ctmc(
                        &net,
                        &view,
                        &args.observable,
                        theta,
                        args.horizon,
                        &opts,
                        args.max_events,
                    )?,
                    _ => ipa_ctmc(
                        &net,
                        &view,
                        &args.observable,
                        theta,
                        args.horizon,
                        &opts,
                        args.max_events,
                    )?,
                };
                rows.push(est);
            }
        }
    }

    write_sens_csv(&args.out, args.seed, &rows)?;

    let mut manifest = Manifest::new("sens", args.seed)
        .input("model", Some(&args.model))
        .input("scaling", args.scaling.as_deref());
    manifest.options = serde_json::json!({
        "method": method.as_str(),
        "observable": args.observable,
        "T": args.horizon,
        "paths": args.paths,
        "h": args.h,
        "central": args.central,
        "aux_times": args.aux_times,
        "aux_pairs": args.aux_pairs,
        "dt": args.dt,
    });
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.extra = serde_json::json!({
        "decouple_histograms": rows
            .iter()
            .map(|r| {
                (
                    r.parameter.clone(),
                    r.decouple_histogram.as_ref().map(|h| {
                        h.iter()
                            .map(|(edge, count)| serde_json::json!([edge, count]))
                            .collect::<Vec<_>>()
                    }),
                )
            })
            .collect::<BTreeMap<_, _>>(),
    });
    manifest.write(&args.out)?;
    Ok(())
}

pub const SENS_CSV_HEADER: [&str; 10] = [
    "parameter",
    "method",
    "estimate",
    "stderr",
    "n",
    "part_continuous",
    "part_continuous_stderr",
    "part_discrete",
    "part_discrete_stderr",
    "wall_time_s",
];

fn write_sens_csv(out: &Path, seed: u64, rows: &[SensitivityEstimate]) -> std::io::Result<()> {
    let mut text = header_comment(seed);
    text.push_str(&csv_row(
        &SENS_CSV_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
    ));
    for r in rows {
        let (pc, pcs, pd, pds) = match &r.parts {
            Some((c, d)) => (
                fmt_f64(c.value),
                fmt_f64(c.stderr),
                fmt_f64(d.value),
                fmt_f64(d.stderr),
            ),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        text.push_str(&csv_row(&[
            r.parameter.clone(),
            r.method.to_string(),
            fmt_f64(r.value),
            fmt_f64(r.stderr),
            r.n.to_string(),
            pc,
            pcs,
            pd,
            pds,
            fmt_f64(r.wall_time_s),
        ]));
    }
    std::fs::write(out, text)
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

pub fn cmd_compare(args: &CompareArgs) -> CmdResult {
    let read = |path: &Path| -> Result<BTreeMap<String, (f64, f64)>, CmdError> {
        let text = std::fs::read_to_string(path)?;
        let (header, rows) = parse_csv(&text)
            .map_err(|e| CmdError::Validation(format!("{}: {e}", path.display())))?;
        let col = |name: &str| -> Result<usize, CmdError> {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CmdError::Validation(format!("{}: missing column {name}", path.display())))
        };
        let (pi, ei, si) = (col("parameter")?, col("estimate")?, col("stderr")?);
        let mut map = BTreeMap::new();
        for row in rows {
            let key = row[pi].clone();
            let est: f64 = row[ei]
                .parse()
                .map_err(|_| CmdError::Validation(format!("bad estimate `{}`", row[ei])))?;
            let se: f64 = row[si]
                .parse()
                .map_err(|_| CmdError::Validation(format!("bad stderr `{}`", row[si])))?;
            if map.insert(key.clone(), (est, se)).is_some() {
                return Err(CmdError::Validation(format!(
                    "{}: duplicate parameter row `{key}`",
                    path.display()
                )));
            }
        }
        Ok(map)
    };

    let a = read(&args.file_a)?;
    let b = read(&args.file_b)?;
    let keys_a: Vec<&String> = a.keys().collect();
    let keys_b: Vec<&String> = b.keys().collect();
    if keys_a != keys_b {
        return Err(CmdError::Validation(format!(
            "row keys differ: {keys_a:?} vs {keys_b:?}"
        )));
    }

    let mut report = String::from("parameter,estimate_a,estimate_b,z\n");
    let mut worst: f64 = 0.0;
    for (key, &(ea, sa)) in &a {
        let (eb, sb) = b[key];
        let combined = (sa * sa + sb * sb).sqrt();
        let z = if combined > 0.0 {
            (ea - eb).abs() / combined
        } else if ea == eb {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
        let _ = writeln!(report, "{key},{},{},{}", fmt_f64(ea), fmt_f64(eb), fmt_f64(z));
    }
    print!("{report}");
    if let Some(out) = &args.out {
        std::fs::write(out, &report)?;
    }
    if worst > args.z_max {
        return Err(CmdError::Mismatch(format!(
            "worst z = {worst} exceeds threshold {}",
            args.z_max
        )));
    }
    println!("agreement: all z <= {}", args.z_max);
    Ok(())
}

// ---------------------------------------------------------------------------
// oracle-cme
// ---------------------------------------------------------------------------

pub fn cmd_oracle_cme(args: &OracleArgs) -> CmdResult {
    let start = Instant::now();
    let doc = load_document(&args.model)?;
    if doc.kind != ModelKind::Ctmc {
        return Err(CmdError::Validation("oracle-cme expects a CTMC model".into()));
    }
    let net = model::load_model(&doc)?;

    let mut bounds = vec![-1i64; net.n_species()];
    for spec in &args.bound {
        let (name, value) = spec.split_once('=').ok_or_else(|| {
            CmdError::Usage(format!("--bound expects name=value, got `{spec}`"))
        })?;
        let idx = net
            .species_index(name.trim())
            .ok_or_else(|| CmdError::Validation(format!("unknown species `{name}`")))?;
        bounds[idx] = value
            .trim()
            .parse()
            .map_err(|_| CmdError::Usage(format!("bad bound value in `{spec}`")))?;
    }
    if let Some(missing) = bounds.iter().position(|&b| b < 0) {
        return Err(CmdError::Usage(format!(
            "missing --bound for species `{}`",
            net.species[missing].name
        )));
    }

    let space = TruncatedStateSpace::new(bounds, args.state_cap)?;
    let dt = args.dt.unwrap_or(args.horizon / 10_000.0);
    let initial = net.initial_copy_numbers();
    let sol = oracle::cme_solve(&net, &net.param_values, &space, &initial, args.horizon, dt)?;

    let mut text = header_comment(args.seed);
    let mut header: Vec<String> = net.species.iter().map(|s| s.name.clone()).collect();
    header.push("probability".into());
    text.push_str(&csv_row(&header));
    for s in 0..space.n_states {
        let state = space.state(s);
        let mut row: Vec<String> = state.iter().map(|x| x.to_string()).collect();
        row.push(fmt_f64(sol.probabilities[s]));
        text.push_str(&csv_row(&row));
    }
    std::fs::write(&args.out, text)?;

    let mut extra = serde_json::Map::new();
    extra.insert(
        "boundary_mass".into(),
        serde_json::json!(sol.boundary_mass),
    );
    extra.insert("leakage".into(), serde_json::json!(sol.leakage));
    if let Some(observable) = &args.observable {
        let mean = oracle::cme_mean(&net, &space, &sol, observable, &net.param_values)?;
        println!("mean[{observable}] = {}", fmt_f64(mean));
        extra.insert(format!("mean_{observable}"), serde_json::json!(mean));
        if let Some(theta) = &args.theta {
            let sens = oracle::cme_sensitivity_fd(
                &net,
                theta,
                &space,
                &initial,
                args.horizon,
                dt,
                args.h,
                observable,
            )?;
            println!("d mean[{observable}] / d {theta} = {}", fmt_f64(sens));
            extra.insert(format!("sens_{observable}_{theta}"), serde_json::json!(sens));
        }
    }

    let mut manifest = Manifest::new("oracle-cme", args.seed).input("model", Some(&args.model));
    manifest.options = serde_json::json!({
        "T": args.horizon,
        "dt": dt,
        "bounds": args.bound,
    });
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.extra = serde_json::Value::Object(extra);
    manifest.write(&args.out)?;
    Ok(())
}
