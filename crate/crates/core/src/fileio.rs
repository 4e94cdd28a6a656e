//! CSV/JSON persistence.
//!
//! Every emitted CSV starts with a `#`-prefixed metadata block (version,
//! full config echo, seeds — enough to re-run bit-identically) followed by a
//! header row. Floating-point values are printed with 17 significant digits
//! (`{:.16e}`), which round-trips `f64` exactly.
//!
//! Operator serialization is a CSV of matrix entries plus a JSON sidecar
//! `{"N": ..., "d": ..., "block_ranges": [[start, end), ...]}`. A problem
//! adds `<stem>_solution.csv` with the grids, the true solution and the
//! exact data.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{BoxplotStats, EnsembleResult, RunRecord};
use crate::linop::{BlockOperator, BlockStructure, Observation};
use crate::problems::{ProblemInstance, ProblemMeta};
use crate::solvers::SolveTrace;

/// 17-significant-digit scientific notation; parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Writes `# key: value` metadata lines.
pub fn write_metadata(w: &mut impl Write, entries: &[(&str, String)]) -> std::io::Result<()> {
    for (k, v) in entries {
        writeln!(w, "# {k}: {v}")?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct OperatorSidecar {
    #[serde(rename = "N")]
    n: usize,
    d: usize,
    block_ranges: Vec<[usize; 2]>,
}

fn csv_path(stem: &Path) -> PathBuf {
    stem.with_extension("csv")
}

fn json_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

fn solution_path(stem: &Path) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push("_solution.csv");
    stem.with_file_name(name)
}

/// Writes `<stem>.csv` (entries) and `<stem>.json` (block structure).
pub fn write_operator(op: &BlockOperator, stem: &Path) -> Result<()> {
    let cp = csv_path(stem);
    let mut w = BufWriter::new(File::create(&cp).map_err(io_err(&cp))?);
    (|| -> std::io::Result<()> {
        write_metadata(
            &mut w,
            &[
                ("svrg-reg", crate::VERSION.to_string()),
                ("content", "operator entries, one matrix row per line".into()),
            ],
        )?;
        for row in op.entries().rows() {
            let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()
    })()
    .map_err(io_err(&cp))?;

    let sidecar = OperatorSidecar {
        n: op.n_blocks(),
        d: op.dim(),
        block_ranges: op
            .structure()
            .ranges()
            .iter()
            .map(|r| [r.start, r.end])
            .collect(),
    };
    let jp = json_path(stem);
    let f = File::create(&jp).map_err(io_err(&jp))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &sidecar).map_err(|e| Error::Parse {
        path: jp.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(())
}

fn read_data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| parse_err(path, line, format!("bad float `{field}`: {e}")))
}

/// Loads an operator written by [`write_operator`]; values round-trip
/// bit-exactly.
pub fn read_operator(stem: &Path) -> Result<BlockOperator> {
    let jp = json_path(stem);
    let f = File::open(&jp).map_err(io_err(&jp))?;
    let sidecar: OperatorSidecar =
        serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Parse {
            path: jp.clone(),
            line: 0,
            message: e.to_string(),
        })?;
    let cp = csv_path(stem);
    let lines = read_data_lines(&cp)?;
    let rows = lines.len();
    let mut entries = Array2::zeros((rows, sidecar.d));
    for (r, (lineno, line)) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != sidecar.d {
            return Err(parse_err(
                &cp,
                *lineno,
                format!("expected {} columns, found {}", sidecar.d, fields.len()),
            ));
        }
        for (c, field) in fields.iter().enumerate() {
            entries[[r, c]] = parse_f64(&cp, *lineno, field)?;
        }
    }
    let ranges = sidecar
        .block_ranges
        .iter()
        .map(|&[s, e]| s..e)
        .collect::<Vec<_>>();
    if ranges.len() != sidecar.n {
        return Err(parse_err(
            &jp,
            0,
            format!(
                "sidecar N = {} does not match {} block ranges",
                sidecar.n,
                ranges.len()
            ),
        ));
    }
    let structure = BlockStructure::new(ranges)?;
    BlockOperator::new(entries, structure)
}

/// Writes the operator files plus `<stem>_solution.csv` holding the grids,
/// `x_true` and `y_exact`. Only square instances (`M = N = d`) are emitted,
/// which covers every generator in this crate.
pub fn write_problem(p: &ProblemInstance, stem: &Path) -> Result<()> {
    if p.dim() != p.operator.total_rows() {
        return Err(Error::invalid(
            "problem",
            "only square instances can be serialized",
        ));
    }
    write_operator(&p.operator, stem)?;
    let sp = solution_path(stem);
    let mut w = BufWriter::new(File::create(&sp).map_err(io_err(&sp))?);
    (|| -> std::io::Result<()> {
        write_metadata(
            &mut w,
            &[
                ("svrg-reg", crate::VERSION.to_string()),
                ("problem", p.meta.name.clone()),
                ("n", p.meta.n.to_string()),
                (
                    "depth",
                    p.meta
                        .depth
                        .map(fmt_f64)
                        .unwrap_or_else(|| "none".into()),
                ),
            ],
        )?;
        writeln!(w, "index,t,x_true,s,y_exact")?;
        for j in 0..p.dim() {
            writeln!(
                w,
                "{},{},{},{},{}",
                j,
                fmt_f64(p.grid_t[j]),
                fmt_f64(p.x_true[j]),
                fmt_f64(p.grid_s[j]),
                fmt_f64(p.y_exact.stacked()[j]),
            )?;
        }
        w.flush()
    })()
    .map_err(io_err(&sp))
}

/// Loads a problem written by [`write_problem`].
pub fn read_problem(stem: &Path) -> Result<ProblemInstance> {
    let operator = read_operator(stem)?;
    let sp = solution_path(stem);

    // recover the name/params from the metadata block
    let f = File::open(&sp).map_err(io_err(&sp))?;
    let mut name = "file".to_string();
    let mut depth = None;
    let mut n_meta = None;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io_err(&sp))?;
        let Some(rest) = line.strip_prefix("# ") else {
            continue;
        };
        if let Some(v) = rest.strip_prefix("problem: ") {
            name = v.trim().to_string();
        } else if let Some(v) = rest.strip_prefix("depth: ") {
            depth = v.trim().parse::<f64>().ok();
        } else if let Some(v) = rest.strip_prefix("n: ") {
            n_meta = v.trim().parse::<usize>().ok();
        }
    }

    let lines = read_data_lines(&sp)?;
    if lines.is_empty() {
        return Err(parse_err(&sp, 0, "no data rows"));
    }
    let header_line = &lines[0];
    if header_line.1 != "index,t,x_true,s,y_exact" {
        return Err(parse_err(
            &sp,
            header_line.0,
            format!("unexpected header `{}`", header_line.1),
        ));
    }
    let rows = &lines[1..];
    if rows.len() != operator.dim() {
        return Err(parse_err(
            &sp,
            0,
            format!(
                "expected {} solution rows, found {}",
                operator.dim(),
                rows.len()
            ),
        ));
    }
    let d = operator.dim();
    let mut grid_t = Array1::zeros(d);
    let mut x_true = Array1::zeros(d);
    let mut grid_s = Array1::zeros(d);
    let mut y = Array1::zeros(d);
    for (lineno, line) in rows {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(&sp, *lineno, "expected 5 columns"));
        }
        let j: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(&sp, *lineno, "bad index"))?;
        if j >= d {
            return Err(parse_err(&sp, *lineno, format!("index {j} out of range")));
        }
        grid_t[j] = parse_f64(&sp, *lineno, fields[1])?;
        x_true[j] = parse_f64(&sp, *lineno, fields[2])?;
        grid_s[j] = parse_f64(&sp, *lineno, fields[3])?;
        y[j] = parse_f64(&sp, *lineno, fields[4])?;
    }
    let y_exact = Observation::from_stacked(operator.structure().clone(), y)?;
    let n = operator.n_blocks();
    Ok(ProblemInstance {
        operator,
        x_true,
        y_exact,
        grid_s,
        grid_t,
        meta: ProblemMeta {
            name,
            n: n_meta.unwrap_or(n),
            depth,
        },
    })
}

/// Writes a solve trace: metadata block, header, then one row per epoch with
/// columns `epoch,residual_norm,relative_error_sq,cumulative_block_steps,wall_time_s`.
pub fn write_trace_csv(
    trace: &SolveTrace,
    metadata: &[(&str, String)],
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    (|| -> std::io::Result<()> {
        write_metadata(&mut w, metadata)?;
        writeln!(
            w,
            "epoch,residual_norm,relative_error_sq,cumulative_block_steps,wall_time_s"
        )?;
        for (e, r) in trace.residual_norms.iter().enumerate() {
            let err = trace
                .errors
                .as_ref()
                .map(|errs| fmt_f64(errs[e]))
                .unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                e,
                fmt_f64(*r),
                err,
                e * trace.block_steps_per_epoch,
                fmt_f64(trace.wall_times[e]),
            )?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Writes `runs.csv`: one row per run.
pub fn write_runs_csv(
    runs: &[RunRecord],
    metadata: &[(&str, String)],
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    (|| -> std::io::Result<()> {
        write_metadata(&mut w, metadata)?;
        writeln!(
            w,
            "run_id,seed,noise_seed,path_seed,delta,stop_index,final_relative_error_sq,wall_time_s"
        )?;
        for r in runs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.run_id,
                r.seed,
                r.noise_seed,
                r.path_seed,
                fmt_f64(r.delta),
                r.stop_index.map(|s| s.to_string()).unwrap_or_default(),
                r.final_error_sq.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.wall_time),
            )?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Writes `epochs.csv`: per-epoch ensemble statistics.
pub fn write_epochs_csv(
    result: &EnsembleResult,
    metadata: &[(&str, String)],
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    (|| -> std::io::Result<()> {
        write_metadata(&mut w, metadata)?;
        writeln!(w, "epoch,mean_error_sq,q25,median,q75")?;
        for s in &result.stats.per_epoch {
            writeln!(
                w,
                "{},{},{},{},{}",
                s.epoch,
                fmt_f64(s.mean_error_sq),
                fmt_f64(s.q25),
                fmt_f64(s.median),
                fmt_f64(s.q75),
            )?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Writes `boxplot.csv`: one row per summarized metric. Outliers are
/// `;`-separated inside the final field.
pub fn write_boxplot_csv(
    entries: &[(&str, &BoxplotStats)],
    metadata: &[(&str, String)],
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    (|| -> std::io::Result<()> {
        write_metadata(&mut w, metadata)?;
        writeln!(
            w,
            "metric,n,mean,median,q25,q75,whisker_low,whisker_high,n_outliers,outliers"
        )?;
        for (name, s) in entries {
            let outliers: Vec<String> = s.outliers.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                name,
                s.n,
                fmt_f64(s.mean),
                fmt_f64(s.median),
                fmt_f64(s.q25),
                fmt_f64(s.q75),
                fmt_f64(s.whisker_low),
                fmt_f64(s.whisker_high),
                s.outliers.len(),
                outliers.join(";"),
            )?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}
