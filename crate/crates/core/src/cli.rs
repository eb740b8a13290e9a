//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 failed verification, 3 I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::closedform::{d_optimal_pg, d_optimal_poisson, ds_optimal, ClosedFormResult};
use crate::criteria::{criterion_value, det_pg_via_poisson, ds_spec, efficiency, CriterionSpec};
use crate::error::Error;
use crate::model::{
    info_pg, info_poisson, l_matrix, Design, DesignRegion, ModelKind, ModelSpec, Point,
};
use crate::numerics::matrix_to_rows;
use crate::optimize::{linspace_step, optimize_weights, zscan, GridOptions, ZscanFamily};
use crate::sim::{count_moments, empirical_fisher_with_se, write_counts_csv, SimConfig};
use crate::verify::{check_equivalence, default_grid_per_axis, EquivalenceKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_VERIFY_FAILED: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "gpdoe",
    version,
    about = "Locally optimal designs for the Poisson-Gamma model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format; JSON by default, CSV for `reproduce-tables`.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Significant digits of numbers in JSON output, or `full`.
    #[arg(long, global = true, default_value = "6")]
    precision: String,
    /// Write output to this file instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DesignKind {
    DPg,
    DPoisson,
    Ds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum VerifyCrit {
    DPg,
    DPoisson,
    Ds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OracleKind {
    Weights,
    ZscanPgD,
    ZscanPoissonDs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form optimal design.
    Design {
        #[arg(long, value_enum)]
        kind: DesignKind,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        region: PathBuf,
    },
    /// Equivalence-theorem check of a design on a grid over the region.
    Verify {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        region: PathBuf,
        #[arg(long, value_enum, default_value_t = VerifyCrit::DPg)]
        crit: VerifyCrit,
        /// Grid points per axis (default depends on the dimension).
        #[arg(long)]
        grid: Option<usize>,
        /// Tolerance relative to the trace bound.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Efficiencies of designs. Without `--crit` the columns are Poisson D,
    /// Poisson-Gamma D and Poisson D_s relative to the closed-form optima on
    /// `--region`; with `--crit` (a JSON list of `{criterion, model_kind}`)
    /// each column is relative to the best of the given designs.
    Efficiency {
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        designs: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        region: Option<PathBuf>,
        #[arg(long)]
        crit: Option<PathBuf>,
    },
    /// Numerical cross-checks: weight optimization on a grid or a scan over `z`.
    Oracle {
        #[arg(long, value_enum, default_value_t = OracleKind::Weights)]
        kind: OracleKind,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        region: PathBuf,
        /// `d-pg`, `d-poisson`, `ds`, or a JSON file `{criterion, model_kind}`.
        #[arg(long, default_value = "d-pg")]
        crit: String,
        /// Candidate grid points per axis.
        #[arg(long, default_value_t = 201)]
        grid: usize,
        #[arg(long, default_value_t = 0.01)]
        z_min: f64,
        #[arg(long, default_value_t = 4.0)]
        z_max: f64,
        #[arg(long, default_value_t = 0.001)]
        z_step: f64,
    },
    /// Monte-Carlo sampling of units observed at the points in `--design`
    /// (a JSON list of `m` points).
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        units: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Information matrices and determinants of a design.
    Info {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Optimal designs and efficiencies for the one- and two-covariate
    /// examples, as CSV.
    ReproduceTables,
}

/// Runs the command line `argv` (including the program name) and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(CliError::Invalid(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INVALID
        }
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            EXIT_IO
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("GPDOE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::Invalid(format!(
            "GPDOE_THREADS must be a non-negative integer, got {raw:?}"
        ))
    })?;
    // a pool that is already set up (repeated calls in one process) is kept
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn precision(raw: &str) -> CliResult<Option<usize>> {
    if raw == "full" {
        return Ok(None);
    }
    match raw.parse::<usize>() {
        Ok(d) if (1..=17).contains(&d) => Ok(Some(d)),
        _ => Err(CliError::Invalid(format!(
            "--precision must be `full` or 1..=17, got {raw:?}"
        ))),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

fn round_json(v: Value, digits: usize) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => json!(round_sig(n.as_f64().expect("f64 number"), digits)),
        Value::Array(a) => Value::Array(a.into_iter().map(|x| round_json(x, digits)).collect()),
        Value::Object(o) => Value::Object(
            o.into_iter()
                .map(|(k, x)| (k, round_json(x, digits)))
                .collect(),
        ),
        other => other,
    }
}

fn render_json<T: Serialize>(value: &T, digits: Option<usize>) -> CliResult<String> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Invalid(e.to_string()))?;
    let v = match digits {
        Some(d) => round_json(v, d),
        None => v,
    };
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| CliError::Invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Three decimals, halves rounded away from zero, no negative zero.
pub fn fmt3(x: f64) -> String {
    format!("{:.3}", (x * 1000.0).round() / 1000.0 + 0.0)
}

fn design_csv(design: &Design) -> String {
    let mut s = String::from("point_index");
    for k in 1..=design.point_dim() {
        let _ = write!(s, ",x{k}");
    }
    s.push_str(",weight\n");
    for (i, (x, w)) in design.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in x {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{w}");
    }
    s
}

fn emit(cli: &Cli, text: &str) -> CliResult<()> {
    match &cli.out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: &Cli) -> CliResult<i32> {
    configure_threads()?;
    let digits = precision(&cli.precision)?;
    let mut code = EXIT_OK;
    let text = match &cli.command {
        Command::Design {
            kind,
            model,
            region,
        } => {
            let model: ModelSpec = read_json(model)?;
            let region: DesignRegion = read_json(region)?;
            let res = match kind {
                DesignKind::DPg => d_optimal_pg(&model, &region)?,
                DesignKind::DPoisson => d_optimal_poisson(&model, &region)?,
                DesignKind::Ds => ds_optimal(&model, &region)?,
            };
            if !res.feasible {
                eprintln!(
                    "warning: z* = {} exceeds the region bound {}; the design is not optimal on this region",
                    res.z_star, res.bound
                );
            }
            match cli.format.unwrap_or(Format::Json) {
                Format::Json => render_json(&res, digits)?,
                Format::Csv => design_csv(&res.design),
            }
        }
        Command::Verify {
            design,
            model,
            region,
            crit,
            grid,
            tol,
        } => {
            let design: Design = read_json(design)?;
            let model: ModelSpec = read_json(model)?;
            let region: DesignRegion = read_json(region)?;
            let grid = grid.unwrap_or_else(|| default_grid_per_axis(region.dim()));
            let kind = match crit {
                VerifyCrit::DPg => EquivalenceKind::DPg,
                VerifyCrit::DPoisson => EquivalenceKind::DPoisson,
                VerifyCrit::Ds => EquivalenceKind::DsPoisson,
            };
            let report = check_equivalence(&design, &model, &region, kind, grid, *tol)?;
            if !report.passes {
                code = EXIT_VERIFY_FAILED;
            }
            match cli.format.unwrap_or(Format::Json) {
                Format::Json => render_json(&report, digits)?,
                Format::Csv => {
                    let mut s = String::from("max_sensitivity,trace_bound,violation,passes\n");
                    let _ = writeln!(
                        s,
                        "{},{},{},{}",
                        report.max_sensitivity, report.trace_bound, report.violation, report.passes
                    );
                    s
                }
            }
        }
        Command::Efficiency {
            designs,
            model,
            region,
            crit,
        } => efficiency_command(
            cli,
            designs,
            model,
            region.as_deref(),
            crit.as_deref(),
            digits,
        )?,
        Command::Oracle {
            kind,
            model,
            region,
            crit,
            grid,
            z_min,
            z_max,
            z_step,
        } => {
            let model: ModelSpec = read_json(model)?;
            let region: DesignRegion = read_json(region)?;
            match kind {
                OracleKind::Weights => {
                    let (criterion, model_kind) = named_criterion(crit, model.p())?;
                    if *grid < 2 {
                        return Err(CliError::Invalid("--grid must be at least 2".into()));
                    }
                    let opts = GridOptions::new(region.grid(*grid), criterion, model_kind);
                    let design = optimize_weights(&opts, &model)?;
                    match cli.format.unwrap_or(Format::Json) {
                        Format::Json => render_json(&design, digits)?,
                        Format::Csv => design_csv(&design),
                    }
                }
                OracleKind::ZscanPgD | OracleKind::ZscanPoissonDs => {
                    if !(*z_step > 0.0 && z_min <= z_max) {
                        return Err(CliError::Invalid(
                            "need z_step > 0 and z_min <= z_max".into(),
                        ));
                    }
                    let family = if *kind == OracleKind::ZscanPgD {
                        ZscanFamily::PgD
                    } else {
                        ZscanFamily::PoissonDs
                    };
                    let (z, v) = zscan(
                        &model,
                        &region,
                        &linspace_step(*z_min, *z_max, *z_step),
                        family,
                    )?;
                    match cli.format.unwrap_or(Format::Json) {
                        Format::Json => {
                            render_json(&json!({"z_best": z, "value_best": v}), digits)?
                        }
                        Format::Csv => format!("z_best,value_best\n{z},{v}\n"),
                    }
                }
            }
        }
        Command::Simulate {
            model,
            design,
            units,
            seed,
        } => {
            let model: ModelSpec = read_json(model)?;
            let xs: Vec<Point> = read_json(design)?;
            let cfg = SimConfig::new(model, xs, *units, *seed)?;
            match cli.format.unwrap_or(Format::Json) {
                Format::Csv => {
                    let mut buf = Vec::new();
                    write_counts_csv(&cfg, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
                    String::from_utf8(buf).expect("CSV output is ASCII")
                }
                Format::Json => {
                    let exact = crate::model::fisher_info_unit(&cfg.model, &cfg.xs)?;
                    let summary = json!({
                        "moments": count_moments(&cfg),
                        "fisher": empirical_fisher_with_se(&cfg),
                        "fisher_exact": exact,
                    });
                    render_json(&summary, digits)?
                }
            }
        }
        Command::Info { design, model } => {
            let design: Design = read_json(design)?;
            let model: ModelSpec = read_json(model)?;
            let po = info_poisson(&design, &model)?;
            let pg = info_pg(&design, &model)?;
            let summary = json!({
                "poisson": {"matrix": po.to_rows(), "det": po.det()},
                "poisson_gamma": {"matrix": pg.to_rows(), "det": pg.det()},
                "l_matrix": matrix_to_rows(&l_matrix(&design, &model)?),
                "det_pg_via_poisson": det_pg_via_poisson(&design, &model)?,
            });
            match cli.format.unwrap_or(Format::Json) {
                Format::Json => render_json(&summary, digits)?,
                Format::Csv => {
                    format!("det_poisson,det_poisson_gamma\n{},{}\n", po.det(), pg.det())
                }
            }
        }
        Command::ReproduceTables => {
            let rows: Vec<TableRow> = [1, 2]
                .iter()
                .map(|t| table_rows(*t))
                .collect::<Result<Vec<_>, _>>()?
                .concat();
            match cli.format.unwrap_or(Format::Csv) {
                Format::Csv => tables_csv(&rows),
                Format::Json => render_json(&rows, digits)?,
            }
        }
    };
    emit(cli, &text)?;
    Ok(code)
}

fn named_criterion(name: &str, p: usize) -> CliResult<(CriterionSpec, ModelKind)> {
    Ok(match name {
        "d-pg" => (CriterionSpec::D, ModelKind::PoissonGamma),
        "d-poisson" => (CriterionSpec::D, ModelKind::Poisson),
        "ds" => (ds_spec(&(1..p).collect::<Vec<_>>(), p)?, ModelKind::Poisson),
        path => {
            let col: CriterionColumn = read_json(Path::new(path))?;
            col.criterion.validate(p)?;
            (col.criterion, col.model_kind)
        }
    })
}

#[derive(Deserialize)]
struct CriterionColumn {
    criterion: CriterionSpec,
    model_kind: ModelKind,
}

#[derive(Serialize)]
struct EfficiencyRow {
    design: String,
    efficiencies: Vec<f64>,
}

fn efficiency_command(
    cli: &Cli,
    paths: &[PathBuf],
    model: &Path,
    region: Option<&Path>,
    crit: Option<&Path>,
    digits: Option<usize>,
) -> CliResult<String> {
    let model: ModelSpec = read_json(model)?;
    let designs: Vec<Design> = paths
        .iter()
        .map(|p| read_json(p))
        .collect::<CliResult<_>>()?;
    let p = model.p();
    let (names, columns, references): (Vec<String>, Vec<(CriterionSpec, ModelKind)>, Vec<Design>) =
        match (crit, region) {
            (Some(crit), _) => {
                let cols: Vec<CriterionColumn> = read_json(crit)?;
                if cols.is_empty() {
                    return Err(CliError::Invalid("criterion list is empty".into()));
                }
                let mut names = Vec::new();
                let mut columns = Vec::new();
                let mut refs = Vec::new();
                for (i, c) in cols.into_iter().enumerate() {
                    c.criterion.validate(p)?;
                    names.push(format!("crit{i}"));
                    refs.push(best_of(&designs, &model, &c.criterion, c.model_kind)?);
                    columns.push((c.criterion, c.model_kind));
                }
                (names, columns, refs)
            }
            (None, Some(region)) => {
                let region: DesignRegion = read_json(region)?;
                let optima: Vec<ClosedFormResult> = vec![
                    d_optimal_poisson(&model, &region)?,
                    d_optimal_pg(&model, &region)?,
                    ds_optimal(&model, &region)?,
                ];
                if optima.iter().any(|o| !o.feasible) {
                    return Err(CliError::Invalid(
                        "closed-form reference designs do not fit into the region".into(),
                    ));
                }
                let ds = ds_spec(&(1..p).collect::<Vec<_>>(), p)?;
                (
                    vec!["eff_po_d".into(), "eff_pg_d".into(), "eff_po_ds".into()],
                    vec![
                        (CriterionSpec::D, ModelKind::Poisson),
                        (CriterionSpec::D, ModelKind::PoissonGamma),
                        (ds, ModelKind::Poisson),
                    ],
                    optima.into_iter().map(|o| o.design).collect(),
                )
            }
            (None, None) => {
                return Err(CliError::Invalid(
                    "efficiency needs --region or --crit".into(),
                ))
            }
        };
    let mut rows = Vec::new();
    for (path, d) in paths.iter().zip(&designs) {
        let effs = columns
            .iter()
            .zip(&references)
            .map(|((c, k), r)| efficiency(d, &model, c, *k, r))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(EfficiencyRow {
            design: path.display().to_string(),
            efficiencies: effs,
        });
    }
    Ok(match cli.format.unwrap_or(Format::Json) {
        Format::Json => render_json(&json!({"columns": names, "rows": rows}), digits)?,
        Format::Csv => {
            let mut s = format!("design,{}\n", names.join(","));
            for r in &rows {
                let cells: Vec<String> = r.efficiencies.iter().map(|e| fmt3(*e)).collect();
                let _ = writeln!(s, "{},{}", r.design, cells.join(","));
            }
            s
        }
    })
}

fn best_of(
    designs: &[Design],
    model: &ModelSpec,
    crit: &CriterionSpec,
    kind: ModelKind,
) -> CliResult<Design> {
    let mut best: Option<(f64, &Design)> = None;
    for d in designs {
        let v = match criterion_value(d, model, crit, kind) {
            Ok(v) => v,
            Err(Error::NotIdentifiable) | Err(Error::SingularForD) => continue,
            Err(e) => return Err(e.into()),
        };
        let score = if crit.larger_is_better() { v } else { -v };
        if best.map_or(true, |(s, _)| score > s) {
            best = Some((score, d));
        }
    }
    best.map(|(_, d)| d.clone())
        .ok_or_else(|| CliError::Invalid("no design has a finite criterion value".into()))
}

/// One support point of one design in the reproduced tables.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub table: u32,
    pub model: String,
    pub criterion: String,
    pub z_star: f64,
    pub point_index: usize,
    pub point: Vec<f64>,
    pub weight: f64,
    pub eff_po_d: f64,
    pub eff_pg_d: f64,
    pub eff_po_ds: f64,
}

/// Rows of table 1 (one covariate, β = (0, −1)) or table 2 (two
/// covariates, β = (0, −1, −1)); region `[0, 10]^{p−1}`, a = b = 1, m = 10.
pub fn table_rows(table: u32) -> crate::error::Result<Vec<TableRow>> {
    let p = table as usize + 1;
    let mut beta = vec![0.0];
    beta.extend(std::iter::repeat(-1.0).take(p - 1));
    let model = ModelSpec::new(beta, 1.0, 1.0, 10)?;
    let region = DesignRegion::cube(p - 1, 0.0, 10.0)?;
    let po_d = d_optimal_poisson(&model, &region)?;
    let pg_d = d_optimal_pg(&model, &region)?;
    let ds = ds_optimal(&model, &region)?;
    let ds_crit = ds_spec(&(1..p).collect::<Vec<_>>(), p)?;
    let ds_name = if p == 2 { "Ds/c" } else { "Ds" };
    let entries = [
        ("poisson", "D", &po_d),
        ("poisson-gamma", "D", &pg_d),
        ("poisson/poisson-gamma", ds_name, &ds),
    ];
    let mut rows = Vec::new();
    for (model_name, crit_name, res) in entries {
        let d = &res.design;
        let e_po = efficiency(
            d,
            &model,
            &CriterionSpec::D,
            ModelKind::Poisson,
            &po_d.design,
        )?;
        let e_pg = efficiency(
            d,
            &model,
            &CriterionSpec::D,
            ModelKind::PoissonGamma,
            &pg_d.design,
        )?;
        let e_ds = efficiency(d, &model, &ds_crit, ModelKind::Poisson, &ds.design)?;
        for (i, (x, w)) in d.iter().enumerate() {
            rows.push(TableRow {
                table,
                model: model_name.into(),
                criterion: crit_name.into(),
                z_star: res.z_star,
                point_index: i,
                point: x.clone(),
                weight: w,
                eff_po_d: e_po,
                eff_pg_d: e_pg,
                eff_po_ds: e_ds,
            });
        }
    }
    Ok(rows)
}

/// Long-format CSV of table rows; `x2` is empty for one covariate.
pub fn tables_csv(rows: &[TableRow]) -> String {
    let mut s = String::from(
        "table,model,criterion,z_star,point_index,x1,x2,weight,eff_po_d,eff_pg_d,eff_po_ds\n",
    );
    for r in rows {
        let x1 = r.point.first().map_or(String::new(), |v| fmt3(*v));
        let x2 = r.point.get(1).map_or(String::new(), |v| fmt3(*v));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.table,
            r.model,
            r.criterion,
            fmt3(r.z_star),
            r.point_index,
            x1,
            x2,
            fmt3(r.weight),
            fmt3(r.eff_po_d),
            fmt3(r.eff_pg_d),
            fmt3(r.eff_po_ds)
        );
    }
    s
}
