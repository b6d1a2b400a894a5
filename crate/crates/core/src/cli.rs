//! Command-line front end. Every command writes CSV or JSON carrying the
//! resolved configuration, so any output file can seed a rerun.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::bounds::{self, BoundReport};
use crate::coupling::{self, KSpec, TraceRecord};
use crate::error::{Error, Result};
use crate::exact::{fmt_rational, to_f64};
use crate::multi_urn::{self, MarginalKind, UrnCycleState};
use crate::stats::{self, Observation};
use crate::two_urn::{self, Mode, TwoUrnParams, EXACT_LIMIT};

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Exact,
    Float,
}

impl From<Precision> for Mode {
    fn from(p: Precision) -> Mode {
        match p {
            Precision::Exact => Mode::Exact,
            Precision::Float => Mode::Float,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "urn-shuffle", version, about = "Bernoulli-Laplace urn chains from pile shuffles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Two-urn transition matrix.
    Kernel,
    /// Hypergeometric stationary law.
    Stationary,
    /// TV to stationarity for t = 0..=T.
    TvCurve,
    /// First t with TV below eps.
    Mixtime,
    /// Evaluate one bound (--kind spectral|t1|t2|t3|t4a|t4b).
    Bound,
    /// Coupling simulations (--which cycle|adjacent|urns).
    Couple,
    /// Monte Carlo run of the 2p-urn chain.
    Simulate,
    /// Exact and statistical oracles (--which kernel|small-chain|deck).
    Oracle,
    /// Reproduce a results table (--which 1|2).
    Table,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Kernel => "kernel",
            Command::Stationary => "stationary",
            Command::TvCurve => "tv-curve",
            Command::Mixtime => "mixtime",
            Command::Bound => "bound",
            Command::Couple => "couple",
            Command::Simulate => "simulate",
            Command::Oracle => "oracle",
            Command::Table => "table",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long, global = true)]
    pub n: Option<u32>,
    #[arg(long, global = true)]
    pub k: Option<u32>,
    #[arg(long, global = true)]
    pub p: Option<u32>,
    /// Half length of the cycle for `couple --which cycle`.
    #[arg(long, global = true)]
    pub y: Option<u64>,
    #[arg(long, global = true)]
    pub t: Option<u64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true)]
    pub c: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub start: Option<u32>,
    /// `k:weight` pairs, comma separated, for a random number of moved balls.
    #[arg(long, global = true)]
    pub k_mix: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub marginal: Option<MarginalArg>,
    #[arg(long, global = true)]
    pub which: Option<String>,
    #[arg(long, global = true)]
    pub kind: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config with the same keys, or an earlier output file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; never changes the output.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MarginalArg {
    Symmetric,
    Difference,
    Forward,
}

impl From<MarginalArg> for MarginalKind {
    fn from(m: MarginalArg) -> Self {
        match m {
            MarginalArg::Symmetric => MarginalKind::Symmetric,
            MarginalArg::Difference => MarginalKind::Difference,
            MarginalArg::Forward => MarginalKind::Forward,
        }
    }
}

/// Resolved parameters of one run. `out` is read from config files but never
/// echoed, so reruns into a different path stay byte-identical.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub y: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub start: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k_mix: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub marginal: Option<MarginalKind>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub which: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision: Option<Precision>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub format: Option<Format>,
    #[serde(skip_serializing, default)]
    pub out: Option<PathBuf>,
}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}

fn need<T: Copy>(v: Option<T>, name: &str, command: &str) -> Result<T> {
    v.ok_or_else(|| Error::Usage(format!("{command} needs --{name}")))
}

impl ExperimentConfig {
    /// Flags win over the file.
    pub fn merge(file: ExperimentConfig, f: &Flags) -> Self {
        ExperimentConfig {
            command: file.command,
            n: f.n.or(file.n),
            k: f.k.or(file.k),
            p: f.p.or(file.p),
            y: f.y.or(file.y),
            t: f.t.or(file.t),
            eps: f.eps.or(file.eps),
            c: f.c.or(file.c),
            alpha: f.alpha.or(file.alpha),
            trials: f.trials.or(file.trials),
            seed: f.seed.or(file.seed),
            start: f.start.or(file.start),
            k_mix: f.k_mix.clone().or(file.k_mix),
            marginal: f.marginal.map(Into::into).or(file.marginal),
            which: f.which.clone().or(file.which),
            kind: f.kind.clone().or(file.kind),
            precision: f.precision.or(file.precision),
            format: f.format.or(file.format),
            out: f.out.clone().or(file.out),
        }
    }

    fn mode(&self) -> Mode {
        self.precision.unwrap_or(Precision::Exact).into()
    }

    fn seed(&self, command: &str) -> Result<u64> {
        need(self.seed, "seed", command)
    }

    fn trials(&self) -> u64 {
        self.trials.unwrap_or(10_000)
    }
}

/// Parses a config file: plain config JSON, a JSON output file, or a CSV
/// output file with a `# config=` line.
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<ExperimentConfig> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let v: Value = serde_json::from_str(trimmed)?;
        let cfg = match v.get("provenance") {
            Some(p) => p.get("config").cloned().unwrap_or(Value::Null),
            None => v,
        };
        return serde_json::from_value(cfg).map_err(|e| Error::Usage(format!("config: {e}")));
    }
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# config=") {
            return serde_json::from_str(rest).map_err(|e| Error::Usage(format!("config: {e}")));
        }
    }
    usage("config file is neither JSON nor an output file with a config line")
}

/// Result of one command before serialisation.
struct Outcome {
    csv: Option<String>,
    json: Value,
    default: Format,
}

impl Outcome {
    fn scalar(json: Value) -> Self {
        Outcome {
            csv: None,
            json,
            default: Format::Json,
        }
    }

    fn table(header: &[&str], rows: Vec<Vec<String>>, json: Value) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in &rows {
            w.write_record(r)?;
        }
        Ok(Outcome {
            csv: Some(bytes_to_string(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)),
            json,
            default: Format::Csv,
        })
    }
}

fn bytes_to_string(b: Vec<u8>) -> String {
    String::from_utf8(b).expect("csv output is utf-8")
}

// key,value rows from a JSON object, nested objects flattened with dots.
fn flatten(prefix: &str, v: &Value, rows: &mut Vec<Vec<String>>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, rows);
            }
        }
        Value::String(s) => rows.push(vec![prefix.to_string(), s.clone()]),
        other => rows.push(vec![prefix.to_string(), other.to_string()]),
    }
}

fn render(command: Command, cfg: &ExperimentConfig, out: Outcome) -> Result<String> {
    let format = cfg.format.unwrap_or(out.default);
    let mut echoed = cfg.clone();
    echoed.command = Some(command.name().to_string());
    let config_json = serde_json::to_value(&echoed)?;
    match format {
        Format::Json => {
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "provenance": {
                    "command": command.name(),
                    "version": VERSION,
                    "config": config_json,
                },
                "result": out.json,
            });
            Ok(serde_json::to_string_pretty(&doc)? + "\n")
        }
        Format::Csv => {
            let mut s = String::new();
            s.push_str(&format!("# schema_version={SCHEMA_VERSION}\n"));
            s.push_str(&format!("# command={}\n", command.name()));
            s.push_str(&format!("# version={VERSION}\n"));
            s.push_str(&format!("# config={}\n", serde_json::to_string(&config_json)?));
            match out.csv {
                Some(body) => s.push_str(&body),
                None => {
                    let mut rows = Vec::new();
                    flatten("", &out.json, &mut rows);
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record(["key", "value"])?;
                    for r in rows {
                        w.write_record(&r)?;
                    }
                    s.push_str(&bytes_to_string(w.into_inner().map_err(|e| Error::Io(e.into_error()))?));
                }
            }
            Ok(s)
        }
    }
}

fn guard_exact(cfg: &ExperimentConfig, n: u32, what: &str) -> Result<()> {
    if cfg.mode() == Mode::Exact && n > EXACT_LIMIT {
        return Err(Error::Capacity(format!(
            "{what}: exact precision is limited to n <= {EXACT_LIMIT}, got n = {n}; use --precision float"
        )));
    }
    Ok(())
}

fn to_vec<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(bytes_to_string(buf))
}

fn cmd_kernel(cfg: &ExperimentConfig) -> Result<Outcome> {
    let n = need(cfg.n, "n", "kernel")?;
    let k = need(cfg.k, "k", "kernel")?;
    guard_exact(cfg, n, "kernel")?;
    let params = TwoUrnParams::new(n, k)?;
    let (csv, entries) = match cfg.mode() {
        Mode::Exact => {
            let kern = two_urn::kernel(params);
            let rows: Vec<Vec<String>> = kern.entries.iter().map(|r| r.iter().map(fmt_rational).collect()).collect();
            (to_vec(|b| kern.write_csv(b))?, json!(rows))
        }
        Mode::Float => {
            let kern = two_urn::kernel_f64(params);
            (to_vec(|b| kern.write_csv(b))?, json!(kern.entries))
        }
    };
    Ok(Outcome {
        csv: Some(csv),
        json: json!({ "n": n, "k": k, "mode": cfg.mode(), "entries": entries }),
        default: Format::Csv,
    })
}

fn cmd_stationary(cfg: &ExperimentConfig) -> Result<Outcome> {
    let n = need(cfg.n, "n", "stationary")?;
    guard_exact(cfg, n, "stationary")?;
    let (csv, probs) = match cfg.mode() {
        Mode::Exact => {
            let d = two_urn::stationary(n)?;
            let probs: Vec<String> = d.probs.iter().map(fmt_rational).collect();
            (to_vec(|b| d.write_csv(b))?, json!(probs))
        }
        Mode::Float => {
            let d = two_urn::stationary_f64(n)?;
            (to_vec(|b| d.write_csv(b))?, json!(d.probs))
        }
    };
    Ok(Outcome {
        csv: Some(csv),
        json: json!({ "n": n, "probs": probs }),
        default: Format::Csv,
    })
}

fn cmd_tv_curve(cfg: &ExperimentConfig) -> Result<Outcome> {
    let n = need(cfg.n, "n", "tv-curve")?;
    let k = need(cfg.k, "k", "tv-curve")?;
    let t = need(cfg.t, "t", "tv-curve")? as usize;
    let start = cfg.start.unwrap_or(0) as usize;
    guard_exact(cfg, n, "tv-curve")?;
    let params = TwoUrnParams::new(n, k)?;
    let rows: Vec<Vec<String>> = match cfg.mode() {
        Mode::Exact => two_urn::tv_curve_exact(params, start, t)?
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), to_f64(v).to_string(), fmt_rational(v)])
            .collect(),
        Mode::Float => two_urn::tv_curve_f64(params, start, t)?
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), v.to_string(), String::new()])
            .collect(),
    };
    let json = json!({ "n": n, "k": k, "start": start, "columns": ["t", "tv", "tv_exact"], "rows": rows });
    Outcome::table(&["t", "tv", "tv_exact"], rows, json)
}

fn cmd_mixtime(cfg: &ExperimentConfig) -> Result<Outcome> {
    let n = need(cfg.n, "n", "mixtime")?;
    let k = need(cfg.k, "k", "mixtime")?;
    let eps = need(cfg.eps, "eps", "mixtime")?;
    let start = cfg.start.unwrap_or(0);
    guard_exact(cfg, n, "mixtime")?;
    let t = two_urn::mixing_time(TwoUrnParams::new(n, k)?, eps, start as usize, cfg.mode())?;
    Ok(Outcome::scalar(json!({
        "n": n, "k": k, "eps": eps, "start": start, "mode": cfg.mode(), "mixing_time": t
    })))
}

fn report(r: BoundReport) -> Result<Outcome> {
    Ok(Outcome::scalar(serde_json::to_value(r)?))
}

fn integer_c(cfg: &ExperimentConfig) -> Result<u32> {
    let c = need(cfg.c, "c", "bound --kind t3")?;
    if c < 0.0 || c.fract() != 0.0 {
        return usage(format!("bound --kind t3 needs a non-negative integer --c, got {c}"));
    }
    Ok(c as u32)
}

fn cmd_bound(cfg: &ExperimentConfig) -> Result<Outcome> {
    let kind = cfg.kind.as_deref().ok_or_else(|| Error::Usage("bound needs --kind".into()))?;
    let cmd = "bound";
    match kind {
        "spectral" => {
            let n = need(cfg.n, "n", cmd)?;
            report(bounds::spectral_upper(
                n,
                need(cfg.k, "k", cmd)?,
                need(cfg.t, "t", cmd)?,
                cfg.start.unwrap_or(0),
                cfg.mode(),
            )?)
        }
        "t1" => report(bounds::theorem1_bound(
            need(cfg.n, "n", cmd)?,
            need(cfg.k, "k", cmd)?,
            need(cfg.eps, "eps", cmd)?,
        )?),
        "t2" => report(bounds::second_moment_lower(
            need(cfg.n, "n", cmd)?,
            need(cfg.k, "k", cmd)?,
            need(cfg.t, "t", cmd)?,
            cfg.alpha,
        )?),
        "t3" => report(bounds::theorem3_bound(need(cfg.n, "n", cmd)?, integer_c(cfg)?, need(cfg.t, "t", cmd)?)?),
        "t4a" => report(coupling::theorem4a_bound(
            need(cfg.n, "n", cmd)?,
            need(cfg.p, "p", cmd)?,
            need(cfg.k, "k", cmd)?,
            need(cfg.c, "c", cmd)?,
        )?),
        "t4b" => report(multi_urn::theorem4b_bound(
            need(cfg.n, "n", cmd)?,
            need(cfg.p, "p", cmd)?,
            need(cfg.k, "k", cmd)?,
            need(cfg.c, "c", cmd)?,
        )?),
        other => usage(format!("unknown bound kind {other}; expected spectral|t1|t2|t3|t4a|t4b")),
    }
}

/// Parses `k:weight,k:weight`.
pub fn parse_k_mix(s: &str) -> Result<KSpec> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let (k, w) = part
            .split_once(':')
            .ok_or_else(|| Error::Usage(format!("k mixture entry {part} is not k:weight")))?;
        let k = k.trim().parse().map_err(|_| Error::Usage(format!("bad k in {part}")))?;
        let w = w.trim().parse().map_err(|_| Error::Usage(format!("bad weight in {part}")))?;
        out.push((k, w));
    }
    Ok(KSpec::Mixture(out))
}

fn trace_outcome(rec: TraceRecord, extra: Map<String, Value>) -> Result<Outcome> {
    let mut csv = String::new();
    for (k, v) in &extra {
        csv.push_str(&format!("# {k}={v}\n"));
    }
    csv.push_str(&to_vec(|b| rec.write_csv(b))?);
    let mut json = extra;
    json.insert("trace".into(), serde_json::to_value(&rec)?);
    Ok(Outcome {
        csv: Some(csv),
        json: Value::Object(json),
        default: Format::Csv,
    })
}

fn cmd_couple(cfg: &ExperimentConfig) -> Result<Outcome> {
    let which = cfg.which.as_deref().ok_or_else(|| Error::Usage("couple needs --which".into()))?;
    let cmd = "couple";
    match which {
        "cycle" => {
            let y = need(cfg.y, "y", cmd)?;
            let rec = coupling::simulate_cycle_pair(y, need(cfg.t, "t", cmd)? as usize, cfg.trials(), cfg.seed(cmd)?)?;
            let mut extra = Map::new();
            extra.insert("expected_ratio".into(), json!((std::f64::consts::PI / (2 * y) as f64).cos()));
            trace_outcome(rec, extra)
        }
        "adjacent" => {
            let r = coupling::adjacent_contraction(
                need(cfg.n, "n", cmd)?,
                need(cfg.k, "k", cmd)?,
                cfg.trials(),
                cfg.seed(cmd)?,
            )?;
            Ok(Outcome::scalar(serde_json::to_value(r)?))
        }
        "urns" => {
            let n = need(cfg.n, "n", cmd)?;
            let p = need(cfg.p, "p", cmd)?;
            let spec = match (&cfg.k_mix, cfg.k) {
                (Some(m), _) => parse_k_mix(m)?,
                (None, Some(k)) => KSpec::Fixed(k),
                (None, None) => return usage("couple --which urns needs --k or --k-mix"),
            };
            let rec = coupling::simulate_urn_cycle_coupling(
                p,
                n,
                &spec,
                need(cfg.t, "t", cmd)? as usize,
                cfg.trials(),
                cfg.seed(cmd)?,
            )?;
            let mut extra = Map::new();
            extra.insert("expected_ratio".into(), json!(coupling::urn_cycle_decay_spec(n, &spec, p)));
            trace_outcome(rec, extra)
        }
        other => usage(format!("unknown coupling {other}; expected cycle|adjacent|urns")),
    }
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let cmd = "simulate";
    let p = need(cfg.p, "p", cmd)?;
    let n = need(cfg.n, "n", cmd)?;
    let k = need(cfg.k, "k", cmd)?;
    let t = need(cfg.t, "t", cmd)? as usize;
    let seed = cfg.seed(cmd)?;
    let trials = cfg.trials();
    let start = UrnCycleState::sorted(p, n, k)?;
    let m = start.urns();
    // fraction of balls still in their home urn
    let home = |s: &UrnCycleState| (0..m).map(|u| s.counts[u][u]).sum::<u32>() as f64 / (m as f64 * n as f64);
    let steps = stats::run_paths(trials, seed, t + 1, |rng| {
        let mut s = start.clone();
        let mut path = Vec::with_capacity(t + 1);
        for i in 0..=t {
            if i > 0 {
                s = multi_urn::step(&s, rng).expect("k <= n was checked");
            }
            path.push(Observation {
                value: home(&s),
                uncoupled: false,
                gap: None,
            });
        }
        path
    });
    let rows: Vec<Vec<String>> = steps
        .iter()
        .map(|s| vec![s.t.to_string(), s.mean.to_string(), s.stderr.to_string()])
        .collect();
    let stationary = 1.0 / m as f64;
    let json = json!({
        "seed": seed, "trials": trials, "stationary_home_fraction": stationary,
        "columns": ["t", "home_fraction", "stderr"], "rows": rows,
    });
    let mut out = Outcome::table(&["t", "home_fraction", "stderr"], rows, json)?;
    out.csv = out.csv.map(|c| {
        format!("# seed={seed}\n# trials={trials}\n# stationary_home_fraction={stationary}\n{c}")
    });
    Ok(out)
}

fn cmd_oracle(cfg: &ExperimentConfig) -> Result<Outcome> {
    let which = cfg.which.as_deref().ok_or_else(|| Error::Usage("oracle needs --which".into()))?;
    let cmd = "oracle";
    match which {
        "kernel" => {
            let n = need(cfg.n, "n", cmd)?;
            let ks: Vec<u32> = match cfg.k {
                Some(k) => vec![k],
                None => (0..=n).collect(),
            };
            let mut results = Vec::new();
            for k in ks {
                let params = TwoUrnParams::new(n, k)?;
                let conv = two_urn::kernel(params);
                let brute = two_urn::brute_force_kernel(params)?;
                let lemma = two_urn::lemma_kernel(params);
                results.push(json!({
                    "k": k,
                    "brute_force_equal": brute == conv,
                    "lemma_equal": lemma == conv,
                    "reversible": two_urn::is_reversible(&conv)?,
                }));
            }
            Ok(Outcome::scalar(json!({ "n": n, "results": results })))
        }
        "small-chain" => {
            let p = need(cfg.p, "p", cmd)?;
            let n = need(cfg.n, "n", cmd)?;
            let k = need(cfg.k, "k", cmd)?;
            let chain = multi_urn::exact_small_oracle(p, n, k)?;
            let mut res = json!({
                "p": p, "n": n, "k": k,
                "states": chain.len(),
                "rows_sum_to_one": chain.row_sums_are_one(),
                "product_hypergeometric_stationary": chain.stationarity_check(),
            });
            if p == 1 {
                res["matches_two_urn"] = json!(multi_urn::matches_two_urn(n, k)?);
            }
            if let Some(t) = cfg.t {
                let start = UrnCycleState::sorted(p, n, k)?;
                let curve: Vec<String> = chain.tv_curve(&start, t as usize)?.iter().map(fmt_rational).collect();
                res["tv_curve"] = json!(curve);
                res["complement_symmetric"] = json!(multi_urn::complement_symmetry_check(p, n, k, t as usize)?);
            }
            Ok(Outcome::scalar(res))
        }
        "deck" => {
            let r = multi_urn::deck_shuffle_oracle(
                need(cfg.p, "p", cmd)?,
                need(cfg.n, "n", cmd)?,
                need(cfg.k, "k", cmd)?,
                need(cfg.t, "t", cmd)? as usize,
                cfg.trials(),
                cfg.seed(cmd)?,
            )?;
            let passes = r.chi_square.passes(1e-3);
            let mut v = serde_json::to_value(r)?;
            v["passes_at_1e-3"] = json!(passes);
            Ok(Outcome::scalar(v))
        }
        "marginal" => {
            let p = need(cfg.p, "p", cmd)?;
            let n = need(cfg.n, "n", cmd)?;
            let k = need(cfg.k, "k", cmd)?;
            let t = need(cfg.t, "t", cmd)?;
            let kind = cfg.marginal.unwrap_or(MarginalKind::Symmetric);
            let curve = multi_urn::marginal_tv_curve(kind, p, n, k, t as usize)?;
            let rows: Vec<Vec<String>> = curve
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    vec![
                        i.to_string(),
                        to_f64(v).to_string(),
                        multi_urn::test_function_bound(p, n, k, i as u64).to_string(),
                    ]
                })
                .collect();
            let json = json!({ "p": p, "n": n, "k": k, "marginal": kind,
                "columns": ["t", "tv", "test_function"], "rows": rows });
            Outcome::table(&["t", "tv", "test_function"], rows, json)
        }
        other => usage(format!("unknown oracle {other}; expected kernel|small-chain|deck|marginal")),
    }
}

/// Rows of the two-urn results table: `(n, k, t, epsilon, published value)`.
pub const TABLE1: [(u32, u32, Option<u64>, Option<f64>, f64); 6] = [
    (52, 26, Some(3), None, 6.1e-4),
    (52, 2, None, Some(0.1), 81.0),
    (208, 104, Some(3), None, 3.8e-5),
    (208, 6, None, Some(0.1), 132.0),
    (1040, 520, Some(3), None, 1.5e-6),
    (1040, 45, None, Some(0.1), 107.0),
];

/// Rows of the multi-urn results table: `(total balls, urns, k, published value)`.
pub const TABLE2: [(u32, u32, u32, f64); 4] = [(104, 4, 13, 11.0), (104, 4, 2, 71.0), (4160, 10, 102, 220.0), (4160, 10, 6, 3700.0)];

fn table1() -> Result<Outcome> {
    let header = [
        "total_balls", "n", "k", "method", "t", "epsilon", "published", "computed", "spectral_sum", "tv_upper", "exact_form",
    ];
    let mut rows = Vec::new();
    for (n, k, t, eps, published) in TABLE1 {
        let row = match (t, eps) {
            (Some(t), _) => {
                let b = bounds::theorem3_bound(n, n / 2 - k, t)?;
                let s = bounds::spectral_upper(n, k, t, 0, Mode::Float)?;
                vec![
                    (2 * n).to_string(), n.to_string(), k.to_string(), "eigenvalues".into(), t.to_string(), String::new(),
                    published.to_string(), b.value.to_string(), s.value.to_string(), b.details["tv_upper"].to_string(), String::new(),
                ]
            }
            (None, Some(e)) => {
                let b = bounds::theorem1_bound(n, k, e)?;
                vec![
                    (2 * n).to_string(), n.to_string(), k.to_string(), "path_coupling".into(), String::new(), e.to_string(),
                    published.to_string(), b.details["asymptotic_small_k"].to_string(), String::new(), String::new(),
                    b.value.to_string(),
                ]
            }
            _ => unreachable!("every row has t or epsilon"),
        };
        rows.push(row);
    }
    let json = json!({ "columns": header, "rows": rows });
    Outcome::table(&header, rows, json)
}

fn table2(cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = cfg.c.unwrap_or(1.0);
    let header = [
        "total_balls", "urns", "k", "n", "p", "c", "published", "sharp", "simplified", "sharp_log_only",
        "simplified_log_only", "discrepancy", "simulated_t", "uncoupled_fraction", "uncoupled_stderr", "target",
    ];
    let simulate = cfg.trials.is_some() || cfg.seed.is_some();
    let mut rows = Vec::new();
    for (total, urns, k, published) in TABLE2 {
        let p = urns / 2;
        let n = total / urns;
        let b = coupling::theorem4a_bound(n, p, k, c)?;
        let (sharp, simple) = (b.value, b.details["simplified"]);
        let scale = sharp / ((16.0 * n as f64 * p as f64).ln() + c);
        let log_only = scale * (16.0 * n as f64 * p as f64).ln();
        let log_only_simple = log_only * simple / sharp;
        let discrepancy = ((published - sharp) / sharp).abs() > 0.1 && ((published - simple) / simple).abs() > 0.1;
        let mut sim = vec![String::new(); 3];
        if simulate && total <= 104 {
            let t = sharp.ceil() as usize;
            let trials = cfg.trials();
            let rec = coupling::simulate_urn_cycle_coupling(p, n, &KSpec::Fixed(k), t, trials, cfg.seed("table --which 2")?)?;
            let f = rec.steps[t].uncoupled_fraction;
            sim = vec![t.to_string(), f.to_string(), (f * (1.0 - f) / trials as f64).sqrt().to_string()];
        }
        let mut row = vec![
            total.to_string(), urns.to_string(), k.to_string(), n.to_string(), p.to_string(), c.to_string(),
            published.to_string(), sharp.to_string(), simple.to_string(), log_only.to_string(), log_only_simple.to_string(),
            discrepancy.to_string(),
        ];
        row.extend(sim);
        row.push(((-c).exp() / 4.0).to_string());
        rows.push(row);
    }
    let json = json!({ "columns": header, "rows": rows });
    Outcome::table(&header, rows, json)
}

fn cmd_table(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.which.as_deref() {
        Some("1") => table1(),
        Some("2") => table2(cfg),
        Some(other) => usage(format!("unknown table {other}; expected 1|2")),
        None => usage("table needs --which"),
    }
}

/// Runs one parsed command and returns the rendered output text.
pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<String> {
    let out = match command {
        Command::Kernel => cmd_kernel(cfg)?,
        Command::Stationary => cmd_stationary(cfg)?,
        Command::TvCurve => cmd_tv_curve(cfg)?,
        Command::Mixtime => cmd_mixtime(cfg)?,
        Command::Bound => cmd_bound(cfg)?,
        Command::Couple => cmd_couple(cfg)?,
        Command::Simulate => cmd_simulate(cfg)?,
        Command::Oracle => cmd_oracle(cfg)?,
        Command::Table => cmd_table(cfg)?,
    };
    render(command, cfg, out)
}

fn run_parsed(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let file = match &cli.flags.config {
        Some(path) => read_config(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = ExperimentConfig::merge(file, &cli.flags);
    let text = match cli.flags.workers {
        Some(0) => return usage("--workers must be at least 1"),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?
            .install(|| execute(cli.command, &cfg))?,
        None => execute(cli.command, &cfg)?,
    };
    match &cfg.out {
        Some(path) => fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            let _ = writeln!(stderr, "error kind=usage msg={}", one_line(first.trim_start_matches("error: ")));
            return 2;
        }
    };
    match run_parsed(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error kind={} msg={}", e.kind(), one_line(&e.message()));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_ok(args: &[&str]) -> String {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("urn-shuffle").chain(args.iter().copied()), &mut out, &mut err);
        assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
        String::from_utf8(out).unwrap()
    }

    fn run_err(args: &[&str]) -> (i32, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("urn-shuffle").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(err).unwrap())
    }

    #[test]
    fn mixtime_example() {
        let out = run_ok(&["mixtime", "--n", "2", "--k", "1", "--eps", "0.1"]);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["result"]["mixing_time"], 3);
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["provenance"]["config"]["n"], 2);
    }

    #[test]
    fn exit_codes() {
        let (code, err) = run_err(&["kernel", "--n", "65", "--k", "3"]);
        assert_eq!(code, 3);
        assert!(err.starts_with("error kind=capacity msg="));
        assert_eq!(err.lines().count(), 1);
        assert_eq!(run_err(&["mixtime", "--n", "4", "--k", "0", "--eps", "0.1"]).0, 4);
        assert_eq!(run_err(&["mixtime", "--n", "4", "--k", "9", "--eps", "0.1"]).0, 2);
        assert_eq!(run_err(&["bogus"]).0, 2);
        assert_eq!(run_err(&["bound", "--kind", "t9"]).0, 2);
        assert_eq!(run_err(&["couple", "--which", "cycle", "--y", "3", "--t", "3"]).0, 2);
    }

    #[test]
    fn config_text_forms() {
        let plain = parse_config_text(r#"{"n": 5, "k": 2}"#).unwrap();
        assert_eq!((plain.n, plain.k), (Some(5), Some(2)));
        assert!(parse_config_text(r#"{"n": 5, "bogus": 1}"#).is_err());
        let csv = "# schema_version=1\n# config={\"n\":3,\"seed\":9}\nt,tv\n";
        let c = parse_config_text(csv).unwrap();
        assert_eq!((c.n, c.seed), (Some(3), Some(9)));
    }

    #[test]
    fn flags_override_file() {
        let file = ExperimentConfig { n: Some(5), k: Some(2), ..Default::default() };
        let flags = Flags { k: Some(3), ..Default::default() };
        let m = ExperimentConfig::merge(file, &flags);
        assert_eq!((m.n, m.k), (Some(5), Some(3)));
    }

    #[test]
    fn k_mix_parsing() {
        assert_eq!(parse_k_mix("1:0.5,2:0.5").unwrap(), KSpec::Mixture(vec![(1, 0.5), (2, 0.5)]));
        assert!(parse_k_mix("1-0.5").is_err());
    }

    #[test]
    fn scalar_as_csv() {
        let out = run_ok(&["bound", "--kind", "t1", "--n", "52", "--k", "2", "--eps", "0.1", "--format", "csv"]);
        assert!(out.starts_with("# schema_version=1\n# command=bound\n"));
        assert!(out.contains("details.asymptotic_small_k,"));
    }
}
