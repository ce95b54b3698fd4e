//! Artifact emission: metric, summary, margin, and trace CSVs, the run
//! manifest, and prototype CSV round trips.
//!
//! Numeric fields use Rust's shortest round-trip float formatting, so
//! every written double parses back to the identical bits. Files are
//! plain text and byte-stable under re-runs with the same manifest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::RunManifest;
use crate::data::save_partition_plan;
use crate::error::{Error, Result};
use crate::proto::{margins, pairwise_distance_stats, Prototype, PrototypeSet};
use crate::sim::{ExperimentResult, RoundReport};

pub fn write_metrics_csv<W: Write>(reports: &[RoundReport], out: &mut W) -> Result<()> {
    writeln!(out, "round,client_id,train_loss,test_acc,best_acc")?;
    for report in reports {
        for c in &report.per_client {
            writeln!(
                out,
                "{},{},{},{},{}",
                report.round, c.client_id, c.train_loss, c.test_accuracy, c.best_accuracy
            )?;
        }
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(reports: &[RoundReport], out: &mut W) -> Result<()> {
    writeln!(out, "round,mean_acc,mean_best_acc,pa_iters,min_margin,mean_margin")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.round, r.mean_accuracy, r.mean_best_accuracy, r.pa_iterations, r.min_margin,
            r.mean_margin
        )?;
    }
    Ok(())
}

pub fn write_margins_csv<W: Write>(
    round_margins: &[Vec<(usize, f64)>],
    out: &mut W,
) -> Result<()> {
    writeln!(out, "round,class_id,normalized_margin")?;
    for (round, margins) in round_margins.iter().enumerate() {
        for (class_id, margin) in margins {
            writeln!(out, "{round},{class_id},{margin}")?;
        }
    }
    Ok(())
}

/// One alignment run: iteration 0 is the normalized input state.
pub fn write_pa_trace_csv<W: Write>(
    trace: &crate::align::AlignerTrace,
    out: &mut W,
) -> Result<()> {
    writeln!(out, "iter,energy,min_dist,mean_dist,max_dist,max_force_change")?;
    if let Some((energy, d)) = &trace.initial {
        writeln!(out, "0,{},{},{},{},0", energy, d.min, d.mean, d.max)?;
    }
    for (i, rec) in trace.iterations.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            rec.energy,
            rec.distances.min,
            rec.distances.mean,
            rec.distances.max,
            rec.max_force_change
        )?;
    }
    Ok(())
}

/// `class_id,v0,v1,...` rows, ascending class order.
pub fn save_prototype_csv<W: Write>(set: &PrototypeSet, out: &mut W) -> Result<()> {
    for p in set.iter() {
        write!(out, "{}", p.class_id)?;
        for x in &p.vec {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parse the `class_id,v0,v1,...` format.
pub fn load_prototype_csv(path: &Path) -> Result<PrototypeSet> {
    let rows = parse_prototype_rows(path, false)?;
    let dim = rows.first().map_or(0, |(_, _, v)| v.len());
    let max_class = rows.iter().map(|&(_, c, _)| c).max().unwrap_or(0);
    let mut set = PrototypeSet::new(dim, max_class + 1);
    for (_, class_id, vec) in rows {
        set.insert(Prototype {
            class_id,
            vec,
            support: 0,
        });
    }
    if set.is_empty() {
        return Err(Error::Config("prototype file has no rows".into()));
    }
    Ok(set)
}

/// Per-round prototype dump: `round,class_id,v0,v1,...` rows.
pub fn write_prototype_dump<W: Write>(dumps: &[PrototypeSet], out: &mut W) -> Result<()> {
    for (round, set) in dumps.iter().enumerate() {
        for p in set.iter() {
            write!(out, "{round},{}", p.class_id)?;
            for x in &p.vec {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Parse a per-round dump back into (round, prototype set) groups,
/// ascending by round.
pub fn load_prototype_dump(path: &Path) -> Result<Vec<(usize, PrototypeSet)>> {
    let rows = parse_prototype_rows(path, true)?;
    let mut by_round: std::collections::BTreeMap<usize, Vec<(usize, Vec<f64>)>> =
        std::collections::BTreeMap::new();
    for (round, class_id, vec) in rows {
        by_round.entry(round).or_default().push((class_id, vec));
    }
    let mut out = Vec::new();
    for (round, rows) in by_round {
        let dim = rows[0].1.len();
        let max_class = rows.iter().map(|&(c, _)| c).max().unwrap_or(0);
        let mut set = PrototypeSet::new(dim, max_class + 1);
        for (class_id, vec) in rows {
            set.insert(Prototype {
                class_id,
                vec,
                support: 0,
            });
        }
        out.push((round, set));
    }
    if out.is_empty() {
        return Err(Error::Config("prototype dump has no rows".into()));
    }
    Ok(out)
}

fn parse_prototype_rows(
    path: &Path,
    with_round: bool,
) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        let head = usize::from(with_round) + 1;
        if fields.len() <= head {
            return Err(Error::Config(format!(
                "line {}: too few fields in prototype row",
                lineno + 1
            )));
        }
        let mut ints = fields[..head].iter().map(|f| {
            f.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("line {}: bad integer `{f}`", lineno + 1)))
        });
        let round = if with_round { ints.next().unwrap()? } else { 0 };
        let class_id = ints.next().unwrap()?;
        let vec: Vec<f64> = fields[head..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("line {}: bad value `{f}`", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        rows.push((round, class_id, vec));
    }
    Ok(rows)
}

/// Recompute normalized margins and distance statistics from a
/// prototype dump; the outputs mirror `margins.csv` plus a
/// `round,min_dist,mean_dist,max_dist` summary.
pub fn write_recomputed_reports<W1: Write, W2: Write>(
    dump: &[(usize, PrototypeSet)],
    margins_out: &mut W1,
    distances_out: &mut W2,
) -> Result<()> {
    writeln!(margins_out, "round,class_id,normalized_margin")?;
    writeln!(distances_out, "round,min_dist,mean_dist,max_dist")?;
    for (round, set) in dump {
        for (class_id, margin) in margins(set)? {
            writeln!(margins_out, "{round},{class_id},{margin}")?;
        }
        let stats = pairwise_distance_stats(set)?;
        writeln!(
            distances_out,
            "{round},{},{},{}",
            stats.min, stats.mean, stats.max
        )?;
    }
    Ok(())
}

pub fn write_manifest<W: Write>(manifest: &RunManifest, out: &mut W) -> Result<()> {
    writeln!(out, "# run manifest (body is a loadable config)")?;
    writeln!(out, "# tool_version={}", manifest.tool_version)?;
    if let Some(t) = manifest.started_unix {
        writeln!(out, "# started_unix={t}")?;
    }
    if let Some(t) = manifest.finished_unix {
        writeln!(out, "# finished_unix={t}")?;
    }
    for key in &manifest.unused_keys {
        writeln!(out, "# unused_key={key} (ignored by mode={})", manifest.resolved["mode"])?;
    }
    for key in &manifest.user_set {
        writeln!(out, "# user_set={key}")?;
    }
    for (key, value) in &manifest.resolved {
        writeln!(out, "{key}={value}")?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Write every artifact of a finished run into `out_dir`:
/// `metrics.csv`, `summary.csv`, `margins.csv`, `partition.txt`,
/// `manifest.txt`, per-round `pa_trace_round_<r>.csv` files for
/// alignment runs, and `prototypes.csv` when dumping was enabled.
/// Returns the written paths.
pub fn emit_reports(
    result: &ExperimentResult,
    manifest: &RunManifest,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if result.reports.is_empty() {
        return Err(Error::Contract("no round reports to emit".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let metrics = out_dir.join("metrics.csv");
    write_metrics_csv(&result.reports, &mut create(&metrics)?)?;
    written.push(metrics);

    let summary = out_dir.join("summary.csv");
    write_summary_csv(&result.reports, &mut create(&summary)?)?;
    written.push(summary);

    let margins_path = out_dir.join("margins.csv");
    write_margins_csv(&result.round_margins, &mut create(&margins_path)?)?;
    written.push(margins_path);

    let plan_path = out_dir.join("partition.txt");
    save_partition_plan(&result.plan, &mut create(&plan_path)?)?;
    written.push(plan_path);

    for (round, trace) in result.pa_traces.iter().enumerate() {
        let path = out_dir.join(format!("pa_trace_round_{round}.csv"));
        write_pa_trace_csv(trace, &mut create(&path)?)?;
        written.push(path);
    }

    if !result.prototype_dumps.is_empty() {
        let path = out_dir.join("prototypes.csv");
        write_prototype_dump(&result.prototype_dumps, &mut create(&path)?)?;
        written.push(path);
    }

    let manifest_path = out_dir.join("manifest.txt");
    write_manifest(manifest, &mut create(&manifest_path)?)?;
    written.push(manifest_path);

    Ok(written)
}
