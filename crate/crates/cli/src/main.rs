use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use jmls_realize::estimate::{estimate_table, exact_covariance_table, realize_from_table, CovarianceTable, Design, RealizeConfig};
use jmls_realize::gbs::{self, GbsModel, InputProcess};
use jmls_realize::io::{self as jio, Model};
use jmls_realize::jmls::{self, GjmlsModel, Layout, MarkovChain};
use jmls_realize::linalg::Mat;
use jmls_realize::par::ExecMode;
use jmls_realize::repr::{self, Representation, DEFAULT_ISOMORPHISM_TOL, DEFAULT_RANK_TOL};
use jmls_realize::Error;

const EXIT_FAILS: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_UNSTABLE: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "jmls-realize", version, about = "Stochastic realization of bilinear and jump-Markov linear systems")]
struct Cli {
    /// Seed for simulation
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Relative singular-value threshold for rank decisions
    #[arg(long, global = true, default_value_t = DEFAULT_RANK_TOL)]
    tol_rank: f64,
    /// Print machine-readable reports
    #[arg(long, global = true)]
    json: bool,
    /// Suppress human-readable reports
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a GBS or GJMLS model and write a CSV series
    Simulate(SimulateArgs),
    /// Estimate (or compute exactly) a covariance table
    EstimateCov(EstimateArgs),
    /// Identify a weak realization from data or a covariance table
    Identify(IdentifyArgs),
    /// Reduce a representation to a minimal one
    Reduce(ModelOut),
    /// Check stability, reachability, observability or minimality
    Check(CheckArgs),
    /// Look for an isomorphism between two models
    Compare(CompareArgs),
    /// Convert between GJMLS and GBS form
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Linear,
    Bilinear,
    Iid,
    Markov,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input process for GBS models (ignored for GJMLS)
    #[arg(long, value_enum, default_value = "linear")]
    kind: Kind,
    #[arg(short = 'T', long = "horizon")]
    horizon: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV series to estimate from
    #[arg(long, conflicts_with = "model")]
    data: Option<PathBuf>,
    /// Compute the table exactly from a GBS or GJMLS model instead
    #[arg(long)]
    model: Option<PathBuf>,
    /// Number of modes of a θ-form series (default: largest mode seen)
    #[arg(long)]
    states: Option<usize>,
    #[arg(long, default_value_t = 5)]
    lambda_len: usize,
    #[arg(long, default_value_t = 2)]
    tee_len: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IdentifyArgs {
    /// CSV series
    #[arg(long, required_unless_present = "exact_cov")]
    data: Option<PathBuf>,
    /// Covariance table JSON; skips estimation
    #[arg(long, conflicts_with = "data")]
    exact_cov: Option<PathBuf>,
    #[arg(long)]
    states: Option<usize>,
    /// State dimension n
    #[arg(short = 'n', long)]
    dim: usize,
    /// Past window N
    #[arg(short = 'N', long)]
    past: usize,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Selection JSON pinning the Hankel rows and columns
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct ModelOut {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Property {
    #[arg(long)]
    stability: bool,
    #[arg(long)]
    minimality: bool,
    #[arg(long)]
    reach: bool,
    #[arg(long)]
    obs: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    property: Property,
}

#[derive(Args)]
struct CompareArgs {
    first: PathBuf,
    second: PathBuf,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Stacked,
    Direct,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, conflicts_with = "to_gjmls", required_unless_present = "to_gjmls")]
    to_gbs: bool,
    #[arg(long)]
    to_gjmls: bool,
    #[arg(long, value_enum, default_value = "stacked")]
    layout: LayoutArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Human or JSON report of one command.
struct Report<'a> {
    cli: &'a Cli,
    lines: Vec<String>,
    json: serde_json::Map<String, Value>,
}

impl<'a> Report<'a> {
    fn new(cli: &'a Cli) -> Self {
        let mut json = serde_json::Map::new();
        json.insert("tol_rank".into(), json!(cli.tol_rank));
        Self { cli, lines: vec![], json }
    }

    fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    fn field(&mut self, k: &str, v: Value) {
        self.json.insert(k.into(), v);
    }

    /// Human text goes to stderr when stdout carries data.
    fn emit(mut self, to_stderr: bool) {
        if self.cli.json {
            let text = Value::Object(self.json).to_string();
            if to_stderr {
                eprintln!("{text}");
            } else {
                println!("{text}");
            }
        } else if !self.cli.quiet {
            self.lines.push(format!("tolerance (rank) {:e}", self.cli.tol_rank));
            for l in self.lines {
                if to_stderr {
                    eprintln!("{l}");
                } else {
                    println!("{l}");
                }
            }
        }
    }
}

fn read_model(path: &Path) -> Result<Model, CliError> {
    let v = jio::read_json_file(path).map_err(|e| CliError::at(path, e))?;
    jio::model_from_json(&v).map_err(|e| CliError::at(path, e))
}

fn write_json(out: &Option<PathBuf>, v: &Value) -> Result<(), CliError> {
    match out {
        Some(p) => jio::write_json_file(p, v).map_err(|e| CliError::at(p, e)),
        None => {
            let mut s = serde_json::to_string_pretty(v).map_err(Error::from)?;
            s.push('\n');
            io::stdout().write_all(s.as_bytes()).map_err(Error::from)?;
            Ok(())
        }
    }
}

struct CliError {
    err: Error,
    context: Option<String>,
}

impl CliError {
    fn at(path: &Path, err: Error) -> Self {
        Self { err, context: Some(path.display().to_string()) }
    }

    fn code(&self) -> u8 {
        match self.err {
            Error::UnstableModel { .. } => EXIT_UNSTABLE,
            Error::RankDeficient { .. }
            | Error::SingularGram(_)
            | Error::InnovationNotFullRank { .. }
            | Error::SingularSelection { .. }
            | Error::NoConvergence { .. } => EXIT_NUMERIC,
            _ => EXIT_INVALID,
        }
    }

    fn name(&self) -> &'static str {
        match self.err {
            Error::RankDeficient { .. } => "RankDeficient",
            Error::SingularGram(_) => "SingularGram",
            Error::InnovationNotFullRank { .. } => "InnovationNotFullRank",
            Error::SingularSelection { .. } => "SingularSelection",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::UnstableModel { .. } => "UnstableModel",
            Error::Json(_) => "MalformedJson",
            Error::Csv(_) => "MalformedCsv",
            Error::Io(_) => "Io",
            _ => "InvalidInput",
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        Self { err, context: None }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Simulate(a) => simulate(&cli, a),
        Cmd::EstimateCov(a) => estimate_cov(&cli, a),
        Cmd::Identify(a) => identify(&cli, a),
        Cmd::Reduce(a) => reduce(&cli, a),
        Cmd::Check(a) => check(&cli, a),
        Cmd::Compare(a) => compare(&cli, a),
        Cmd::Convert(a) => convert(&cli, a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let ctx = e.context.as_deref().map(|c| format!("{c}: ")).unwrap_or_default();
            if cli.json {
                eprintln!("{}", json!({ "error": e.name(), "message": format!("{ctx}{}", e.err) }));
            } else {
                eprintln!("error ({}): {ctx}{}", e.name(), e.err);
            }
            ExitCode::from(e.code())
        }
    }
}

fn check_tolerance(cli: &Cli) -> Result<(), CliError> {
    if cli.tol_rank > 0.0 && cli.tol_rank.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid("--tol-rank must be positive".into()).into())
    }
}

/// Chain of a GBS over pair letters, rebuilt from the weights.
fn chain_from_pair_weights(model: &GbsModel) -> Result<(MarkovChain, Vec<(usize, usize)>), Error> {
    let pairs = jmls::parse_pair_names(model.alphabet())?;
    let d = pairs.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
    let mut p = Mat::zeros(d, d);
    for (&(a, b), &w) in pairs.iter().zip(model.weights().as_slice()) {
        p[(a, b)] = w;
    }
    Ok((MarkovChain::new(p)?, pairs))
}

fn write_series(out: &Option<PathBuf>, ts: &jmls_realize::estimate::TimeSeries) -> Result<(), CliError> {
    match out {
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::at(p, e.into()))?;
            jio::write_series_csv(ts, BufWriter::new(f)).map_err(|e| CliError::at(p, e))
        }
        None => Ok(jio::write_series_csv(ts, BufWriter::new(io::stdout().lock()))?),
    }
}

fn read_series(path: &Path, states: Option<usize>) -> Result<jmls_realize::estimate::TimeSeries, CliError> {
    let f = File::open(path).map_err(|e| CliError::at(path, e.into()))?;
    jio::read_series_csv(BufReader::new(f), states).map_err(|e| CliError::at(path, e))
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<u8, CliError> {
    let model = read_model(&a.model)?;
    let mut rep = Report::new(cli);
    let (ts, radius) = match &model {
        Model::Gjmls(h) => {
            let r = h.stability_radius();
            rep.line(format!("spectral radius {r}"));
            rep.field("spectral_radius", json!(r));
            (jmls::simulate_gjmls(h, a.horizon, a.burn_in, cli.seed), r)
        }
        Model::Gbs(_) | Model::Weak(_) => {
            let g = match &model {
                Model::Gbs(g) => g.clone(),
                Model::Weak(w) => w.to_gbs()?,
                _ => unreachable!(),
            };
            let r = g.stability_radius();
            rep.line(format!("spectral radius {r}"));
            rep.field("spectral_radius", json!(r));
            let input = match a.kind {
                Kind::Linear => InputProcess::Linear,
                Kind::Bilinear => InputProcess::BilinearGaussian,
                Kind::Iid => InputProcess::IidIndicator,
                Kind::Markov => {
                    let (chain, pairs) = chain_from_pair_weights(&g)?;
                    InputProcess::MarkovPair { chain, pairs }
                }
            };
            (gbs::simulate(&g, &input, a.horizon, a.burn_in, cli.seed), r)
        }
        Model::Representation(_) => return Err(Error::Invalid("simulation needs a GBS or GJMLS model".into()).into()),
    };
    rep.field("stable", json!(radius < 1.0));
    let ts = ts?;
    write_series(&a.out, &ts)?;
    rep.line(format!("wrote {} samples", ts.len()));
    rep.field("samples", json!(ts.len()));
    rep.emit(true);
    Ok(0)
}

fn exact_table_for(model: &Model, lambda_len: usize, tee_len: usize) -> Result<CovarianceTable, Error> {
    match model {
        Model::Gbs(g) => exact_covariance_table(g, lambda_len, tee_len),
        Model::Weak(w) => exact_covariance_table(&w.to_gbs()?, lambda_len, tee_len),
        Model::Gjmls(h) => exact_covariance_table(&jmls::output_gbs_from_gjmls(h)?, lambda_len, tee_len),
        Model::Representation(_) => Err(Error::Invalid("exact covariances need a GBS or GJMLS model".into())),
    }
}

fn estimate_cov(cli: &Cli, a: &EstimateArgs) -> Result<u8, CliError> {
    let mut rep = Report::new(cli);
    let table = match (&a.data, &a.model) {
        (Some(d), _) => {
            let ts = read_series(d, a.states)?;
            let design = Design::estimate_from(&ts)?;
            rep.line(format!("{} samples, letters {}", ts.len(), design.alphabet.names().join(" ")));
            estimate_table(&ts, &design, a.lambda_len, a.tee_len, ExecMode::Auto)?
        }
        (None, Some(m)) => exact_table_for(&read_model(m)?, a.lambda_len, a.tee_len).map_err(|e| CliError::at(m, e))?,
        (None, None) => return Err(Error::Invalid("give --data or --model".into()).into()),
    };
    rep.line(format!("{} lambda and {} tee entries", table.lambda.len(), table.tee.len()));
    rep.field("lambda_entries", json!(table.lambda.len()));
    rep.field("tee_entries", json!(table.tee.len()));
    write_json(&a.out, &jio::table_to_json(&table))?;
    rep.emit(true);
    Ok(0)
}

fn identify(cli: &Cli, a: &IdentifyArgs) -> Result<u8, CliError> {
    check_tolerance(cli)?;
    let table = match (&a.data, &a.exact_cov) {
        (_, Some(p)) => jio::table_from_json(&jio::read_json_file(p).map_err(|e| CliError::at(p, e))?).map_err(|e| CliError::at(p, e))?,
        (Some(d), None) => {
            let ts = read_series(d, a.states)?;
            let design = Design::estimate_from(&ts)?;
            estimate_table(&ts, &design, 2 * a.dim + 2, a.past, ExecMode::Auto)?
        }
        (None, None) => return Err(Error::Invalid("give --data or --exact-cov".into()).into()),
    };
    let mut cfg = RealizeConfig::new(a.dim, a.past);
    cfg.rank_tol = cli.tol_rank;
    cfg.ridge = a.ridge;
    if let Some(p) = &a.selection {
        let v = jio::read_json_file(p).map_err(|e| CliError::at(p, e))?;
        cfg.selection = Some(jio::selection_from_json(table.alphabet(), &v).map_err(|e| CliError::at(p, e))?);
    }
    let (w, diag) = realize_from_table(&table, &cfg)?;
    let djson = jio::diagnostics_to_json(table.alphabet(), &diag);
    if let Some(p) = &a.diagnostics {
        jio::write_json_file(p, &djson).map_err(|e| CliError::at(p, e))?;
    }
    write_json(&a.out, &jio::weak_realization_to_json(&w))?;
    let mut rep = Report::new(cli);
    rep.line(format!("identified dimension {} over letters {}", w.dim(), w.alphabet.names().join(" ")));
    rep.line(format!("hankel singular values {:?}", diag.hankel_singular_values));
    rep.line(format!("gram condition {}", diag.gram_condition));
    rep.field("dim", json!(w.dim()));
    rep.field("diagnostics", djson);
    rep.emit(true);
    Ok(0)
}

fn covariance_rep(model: &Model) -> Result<Representation, Error> {
    match model {
        Model::Representation(r) => Ok(r.clone()),
        Model::Gbs(g) => gbs::associated_representation(g),
        Model::Weak(w) => Ok(w.covariance_representation()),
        Model::Gjmls(h) => gbs::associated_representation(&jmls::gbs_from_gjmls(h)?.0),
    }
}

fn reduce(cli: &Cli, a: &ModelOut) -> Result<u8, CliError> {
    check_tolerance(cli)?;
    let model = read_model(&a.model)?;
    let r = covariance_rep(&model)?;
    let m = repr::reduce_minimal(&r, cli.tol_rank);
    write_json(&a.out, &jio::representation_to_json(&m))?;
    let mut rep = Report::new(cli);
    rep.line(format!("dimension {} -> {}", r.dim(), m.dim()));
    rep.field("dim_before", json!(r.dim()));
    rep.field("dim_after", json!(m.dim()));
    rep.emit(true);
    Ok(0)
}

fn check(cli: &Cli, a: &CheckArgs) -> Result<u8, CliError> {
    check_tolerance(cli)?;
    let model = read_model(&a.model)?;
    let mut rep = Report::new(cli);
    let p = &a.property;
    let holds = if p.stability {
        let radius = match &model {
            Model::Representation(r) => repr::stability_radius(r.a_all(), None),
            Model::Gbs(g) => g.stability_radius(),
            Model::Weak(w) => w.to_gbs()?.stability_radius(),
            Model::Gjmls(h) => h.stability_radius(),
        };
        let ok = radius < 1.0 - repr::DEFAULT_STABILITY_MARGIN;
        rep.line(format!("spectral radius {radius}: {}", if ok { "stable" } else { "not stable" }));
        rep.field("property", json!("stability"));
        rep.field("spectral_radius", json!(radius));
        ok
    } else {
        let name = if matches!(model, Model::Gjmls(_)) { "gjmls" } else { "representation" };
        let (reach, obs) = (p.reach || p.minimality, p.obs || p.minimality);
        let (r_ok, o_ok) = match &model {
            Model::Gjmls(h) => {
                let r_ok = if reach { Some(jmls::gjmls_reach(h, cli.tol_rank)?.1) } else { None };
                let o_ok = if obs { Some(jmls::gjmls_obs(h, cli.tol_rank).1) } else { None };
                (r_ok, o_ok)
            }
            _ => {
                let r = covariance_rep(&model)?;
                rep.field("dim", json!(r.dim()));
                (reach.then(|| repr::is_reachable(&r, cli.tol_rank)), obs.then(|| repr::is_observable(&r, cli.tol_rank)))
            }
        };
        rep.field("checked", json!(name));
        let label = if p.minimality {
            "minimality"
        } else if p.reach {
            "reachability"
        } else {
            "observability"
        };
        rep.field("property", json!(label));
        if let Some(x) = r_ok {
            rep.line(format!("reachable: {x}"));
            rep.field("reachable", json!(x));
        }
        if let Some(x) = o_ok {
            rep.line(format!("observable: {x}"));
            rep.field("observable", json!(x));
        }
        r_ok.unwrap_or(true) && o_ok.unwrap_or(true)
    };
    rep.field("holds", json!(holds));
    rep.emit(false);
    Ok(if holds { 0 } else { EXIT_FAILS })
}

fn mat_json(m: &Mat) -> Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

fn compare(cli: &Cli, a: &CompareArgs) -> Result<u8, CliError> {
    let m1 = read_model(&a.first)?;
    let m2 = read_model(&a.second)?;
    let mut rep = Report::new(cli);
    let found: Result<Vec<Mat>, Error> = match (&m1, &m2) {
        (Model::Gjmls(h1), Model::Gjmls(h2)) => jmls::gjmls_isomorphism(h1, h2, a.tol),
        (Model::Gjmls(_), _) | (_, Model::Gjmls(_)) => return Err(Error::Invalid("cannot compare a GJMLS with another model kind".into()).into()),
        _ => {
            let (r1, r2) = (covariance_rep(&m1)?, covariance_rep(&m2)?);
            repr::find_isomorphism(&r1, &r2, a.tol.max(DEFAULT_ISOMORPHISM_TOL)).map(|iso| {
                rep.field("residuals", json!(iso.residuals));
                vec![iso.t]
            })
        }
    };
    match found {
        Ok(ts) => {
            rep.line("isomorphic");
            for (i, t) in ts.iter().enumerate() {
                rep.line(format!("T[{}] = {:?}", i + 1, mat_json(t)));
            }
            rep.field("isomorphic", json!(true));
            rep.field("T", json!(ts.iter().map(mat_json).collect::<Vec<_>>()));
            rep.emit(false);
            Ok(0)
        }
        Err(e @ (Error::NotIsomorphic(_) | Error::NotMinimal(_))) => {
            rep.line(format!("not isomorphic: {e}"));
            rep.field("isomorphic", json!(false));
            rep.field("reason", json!(e.to_string()));
            rep.emit(false);
            Ok(EXIT_FAILS)
        }
        Err(e) => Err(e.into()),
    }
}

/// Largest relative difference of `Λ_w`, `|w| ≤ 3`, between two output GBS.
fn covariance_gap(g1: &GbsModel, g2: &GbsModel) -> Result<f64, Error> {
    let t1 = exact_covariance_table(g1, 3, 0)?;
    let t2 = exact_covariance_table(g2, 3, 0)?;
    // stacked relative error over admissible words; inadmissible Λ_w of an identified model is noise
    let (mut num, mut den) = (0.0, 0.0);
    for w in g1.language().words_up_to(3).into_iter().filter(|w| !w.is_empty()) {
        let (a, b) = (t1.lambda(&w)?, t2.lambda(&w)?);
        num += (&a - &b).norm_squared();
        den += a.norm_squared().max(b.norm_squared());
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

fn convert(cli: &Cli, a: &ConvertArgs) -> Result<u8, CliError> {
    check_tolerance(cli)?;
    let model = read_model(&a.model)?;
    let layout = match a.layout {
        LayoutArg::Stacked => Layout::Stacked,
        LayoutArg::Direct => Layout::Direct,
    };
    let mut rep = Report::new(cli);
    let (out, gap) = if a.to_gbs {
        let Model::Gjmls(h) = &model else {
            return Err(Error::Invalid("--to-gbs needs a GJMLS model".into()).into());
        };
        let (g, ex) = jmls::gbs_from_gjmls(h)?;
        let back = jmls::gjmls_from_gbs(&g, h.chain(), Layout::Stacked, cli.tol_rank)?;
        let gap = covariance_gap(&ex.output_gbs(&g)?, &jmls::output_gbs_from_gjmls(&back)?)?;
        (jio::gbs_to_json(&g), gap)
    } else {
        let g = match &model {
            Model::Gbs(g) => g.clone(),
            Model::Weak(w) => w.to_gbs()?,
            _ => return Err(Error::Invalid("--to-gjmls needs a GBS model over mode pairs".into()).into()),
        };
        let (chain, _) = chain_from_pair_weights(&g)?;
        let h: GjmlsModel = jmls::gjmls_from_gbs(&g, &chain, layout, cli.tol_rank)?;
        let original = match layout {
            Layout::Direct => g.clone(),
            Layout::Stacked => {
                let nq = chain.len();
                let p = g.output_dim() / nq;
                let mut e = Mat::zeros(p, p * nq);
                for q in 0..nq {
                    e.view_mut((0, q * p), (p, p)).fill_with_identity();
                }
                GbsModel::new(g.alphabet().clone(), g.a().to_vec(), g.k().to_vec(), &e * g.c(), &e * g.d(), g.weights().clone(), g.q().to_vec(), g.language().clone())?
            }
        };
        let gap = covariance_gap(&original, &jmls::output_gbs_from_gjmls(&h)?)?;
        rep.field("dims", json!(h.dims()));
        rep.line(format!("mode dimensions {:?}", h.dims()));
        (jio::gjmls_to_json(&h), gap)
    };
    rep.line(format!("output covariance difference {gap:e}"));
    rep.field("covariance_difference", json!(gap));
    write_json(&a.out, &out)?;
    rep.emit(true);
    Ok(0)
}
