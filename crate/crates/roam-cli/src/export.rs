//! The `export-plots` subcommand: turns a metrics log or an evaluation
//! attention table into tidy plot-ready files, re-verifying attention
//! normalization on the way out.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::cli::{ExportArgs, ExportKind};
use crate::error::CliError;
use crate::metrics::{fmt_f64, open_writer};

pub fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    if args.smooth == 0 {
        return Err(CliError::usage("--smooth must be at least 1"));
    }
    let table = Table::read(&args.input)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot create {}: {e}", args.out.display())))?;
    match args.kind {
        ExportKind::Curves => export_curves(&table, &args),
        ExportKind::Entropy => export_entropy(&table, &args),
        ExportKind::Heatmap => export_heatmap(&table, &args),
    }
}

/// A parsed comma-separated input: header plus string rows, with the
/// 1-based file line retained per row for error messages.
struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table, CliError> {
        let name = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_path(path)
            .map_err(|e| CliError::usage(format!("cannot read {name}: {e}")))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::usage(format!("{name}: cannot read header: {e}")))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| match e.position() {
                Some(p) => CliError::usage(format!("{name}: line {}: {e}", p.line())),
                None => CliError::usage(format!("{name}: {e}")),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table { name, header, rows })
    }

    fn column(&self, key: &str) -> Result<usize, CliError> {
        self.header.iter().position(|h| h == key).ok_or_else(|| {
            CliError::usage(format!(
                "{}: missing column `{key}` (found: {})",
                self.name,
                self.header.join(", ")
            ))
        })
    }

    fn field<'a>(&self, row: &'a (u64, csv::StringRecord), col: usize, key: &str) -> Result<&'a str, CliError> {
        row.1.get(col).ok_or_else(|| {
            CliError::usage(format!("{}: line {}: missing `{key}` field", self.name, row.0))
        })
    }

    fn f64_field(&self, row: &(u64, csv::StringRecord), col: usize, key: &str) -> Result<f64, CliError> {
        let raw = self.field(row, col, key)?;
        raw.trim().parse::<f64>().map_err(|_| {
            CliError::usage(format!(
                "{}: line {}: cannot parse `{raw}` as a number in column {key}",
                self.name, row.0
            ))
        })
    }

    fn u64_field(&self, row: &(u64, csv::StringRecord), col: usize, key: &str) -> Result<u64, CliError> {
        let raw = self.field(row, col, key)?;
        raw.trim().parse::<u64>().map_err(|_| {
            CliError::usage(format!(
                "{}: line {}: cannot parse `{raw}` as an integer in column {key}",
                self.name, row.0
            ))
        })
    }
}

/// (episode, exploration_rate) with a trailing moving average.
fn export_curves(table: &Table, args: &ExportArgs) -> Result<(), CliError> {
    let ep_col = table.column("episode")?;
    let x_col = table.column("exploration_rate")?;
    let mut series: Vec<(String, f64)> = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let ep = table.field(row, ep_col, "episode")?.trim().to_string();
        let x = table.f64_field(row, x_col, "exploration_rate")?;
        series.push((ep, x));
    }
    let out = args.out.join("curves.csv");
    let mut w = open_writer(&out)?;
    write_row(&mut w, &out, &["episode", "exploration_rate"])?;
    for k in 0..series.len() {
        let lo = (k + 1).saturating_sub(args.smooth);
        let window = &series[lo..=k];
        let mean = window.iter().map(|(_, x)| x).sum::<f64>() / window.len() as f64;
        write_row(&mut w, &out, &[series[k].0.clone(), fmt_f64(mean)])?;
    }
    finish(w, &out)
}

/// (episode, agent, head, entropy). From a metrics log the traces are the
/// per-head means already aggregated over the team, reported with agent
/// -1; from an evaluation attention table they are per agent, averaged
/// over the episode's steps.
fn export_entropy(table: &Table, args: &ExportArgs) -> Result<(), CliError> {
    let out = args.out.join("entropy.csv");
    let mut w = open_writer(&out)?;
    write_row(&mut w, &out, &["episode", "agent", "head", "entropy"])?;

    if table.header.iter().any(|h| h == "attn_entropy_h0") {
        let ep_col = table.column("episode")?;
        let heads: Vec<(usize, usize)> = table
            .header
            .iter()
            .enumerate()
            .filter_map(|(idx, h)| {
                h.strip_prefix("attn_entropy_h").and_then(|n| n.parse::<usize>().ok()).map(|n| (n, idx))
            })
            .collect();
        for row in &table.rows {
            let ep = table.u64_field(row, ep_col, "episode")?;
            for &(head, col) in &heads {
                let v = table.f64_field(row, col, &table.header[col])?;
                write_row(&mut w, &out, &[ep.to_string(), "-1".into(), head.to_string(), fmt_f64(v)])?;
            }
        }
        return finish(w, &out);
    }

    // Attention-table source: entropy of each (episode, step, head, agent)
    // weight row, then the mean over steps.
    let weights = read_attention(table)?;
    let mut acc: BTreeMap<(u64, u64, u64), (f64, u64)> = BTreeMap::new();
    for ((episode, _step, head, i), row) in &weights {
        let mut h = 0.0;
        for &(_, w) in row {
            if w > 0.0 {
                h -= w * w.ln();
            }
        }
        let e = acc.entry((*episode, *i, *head)).or_insert((0.0, 0));
        e.0 += h;
        e.1 += 1;
    }
    for ((episode, agent, head), (sum, n)) in &acc {
        write_row(
            &mut w,
            &out,
            &[episode.to_string(), agent.to_string(), head.to_string(), fmt_f64(sum / *n as f64)],
        )?;
    }
    finish(w, &out)
}

/// (step, i, j, weight) for one episode, averaged over heads, with the
/// per-row normalization re-verified.
fn export_heatmap(table: &Table, args: &ExportArgs) -> Result<(), CliError> {
    let weights = read_attention(table)?;
    let episode = match args.episode {
        Some(e) => u64::from(e),
        None => match weights.keys().map(|k| k.0).min() {
            Some(e) => e,
            None => {
                // Header-only input produces a header-only output.
                let out = args.out.join("heatmap.csv");
                let mut w = open_writer(&out)?;
                write_row(&mut w, &out, &["step", "i", "j", "weight"])?;
                return finish(w, &out);
            }
        },
    };

    // Mean over heads per (step, i, j); head count tracked for the divide.
    let mut cells: BTreeMap<(u64, u64, u64), (f64, u64)> = BTreeMap::new();
    for ((ep, step, _head, i), row) in &weights {
        if *ep != episode {
            continue;
        }
        for &(j, wgt) in row {
            let e = cells.entry((*step, *i, j)).or_insert((0.0, 0));
            e.0 += wgt;
            e.1 += 1;
        }
    }
    if args.episode.is_some() && cells.is_empty() && !weights.is_empty() {
        return Err(CliError::usage(format!(
            "{}: episode {episode} has no attention rows",
            table.name
        )));
    }

    let out = args.out.join("heatmap.csv");
    let mut w = open_writer(&out)?;
    write_row(&mut w, &out, &["step", "i", "j", "weight"])?;
    let mut sums: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for ((step, i, j), (sum, n)) in &cells {
        let mean = sum / *n as f64;
        *sums.entry((*step, *i)).or_insert(0.0) += mean;
        write_row(&mut w, &out, &[step.to_string(), i.to_string(), j.to_string(), fmt_f64(mean)])?;
    }
    for ((step, i), total) in &sums {
        if (total - 1.0).abs() > 1e-9 {
            return Err(CliError::usage(format!(
                "{}: attention weights for episode {episode} step {step} agent {i} sum to {total:.12}, not 1",
                table.name
            )));
        }
    }
    finish(w, &out)
}

type AttentionRows = BTreeMap<(u64, u64, u64, u64), Vec<(u64, f64)>>;

/// Groups an attention table by (episode, step, head, i) into (j, weight)
/// rows, validating every field.
fn read_attention(table: &Table) -> Result<AttentionRows, CliError> {
    let ep_col = table.column("episode")?;
    let step_col = table.column("step")?;
    let head_col = table.column("head")?;
    let i_col = table.column("i")?;
    let j_col = table.column("j")?;
    let w_col = table.column("weight")?;
    let mut rows: AttentionRows = BTreeMap::new();
    for row in &table.rows {
        let ep = table.u64_field(row, ep_col, "episode")?;
        let step = table.u64_field(row, step_col, "step")?;
        let head = table.u64_field(row, head_col, "head")?;
        let i = table.u64_field(row, i_col, "i")?;
        let j = table.u64_field(row, j_col, "j")?;
        let wgt = table.f64_field(row, w_col, "weight")?;
        if !(0.0..=1.0 + 1e-12).contains(&wgt) {
            return Err(CliError::usage(format!(
                "{}: line {}: weight {wgt} outside [0, 1]",
                table.name, row.0
            )));
        }
        rows.entry((ep, step, head, i)).or_default().push((j, wgt));
    }
    Ok(rows)
}

fn write_row<W: std::io::Write, S: AsRef<[u8]>>(
    w: &mut csv::Writer<W>,
    path: &Path,
    row: &[S],
) -> Result<(), CliError> {
    w.write_record(row)
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

fn finish<W: std::io::Write>(mut w: csv::Writer<W>, path: &Path) -> Result<(), CliError> {
    w.flush()
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn args(kind: ExportKind, input: &Path, out: &Path, smooth: usize) -> ExportArgs {
        ExportArgs {
            kind,
            input: input.to_path_buf(),
            out: out.to_path_buf(),
            smooth,
            episode: None,
        }
    }

    fn tmpdir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("roam-export-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn smoothing_window_one_is_identity() {
        let d = tmpdir("curves");
        let input = d.join("metrics.csv");
        fs::write(
            &input,
            "episode,steps,exploration_rate\n0,60,1.00000000e-1\n1,60,3.00000000e-1\n2,60,5.00000000e-1\n",
        )
        .unwrap();
        cmd_export(args(ExportKind::Curves, &input, &d, 1)).unwrap();
        let out = fs::read_to_string(d.join("curves.csv")).unwrap();
        assert_eq!(
            out,
            "episode,exploration_rate\n0,1.00000000e-1\n1,3.00000000e-1\n2,5.00000000e-1\n"
        );
        // Window 2 averages adjacent pairs, first row unchanged.
        cmd_export(args(ExportKind::Curves, &input, &d, 2)).unwrap();
        let out = fs::read_to_string(d.join("curves.csv")).unwrap();
        assert_eq!(
            out,
            "episode,exploration_rate\n0,1.00000000e-1\n1,2.00000000e-1\n2,4.00000000e-1\n"
        );
    }

    #[test]
    fn empty_metrics_gives_header_only() {
        let d = tmpdir("empty");
        let input = d.join("metrics.csv");
        fs::write(&input, "episode,steps,exploration_rate\n").unwrap();
        cmd_export(args(ExportKind::Curves, &input, &d, 3)).unwrap();
        assert_eq!(
            fs::read_to_string(d.join("curves.csv")).unwrap(),
            "episode,exploration_rate\n"
        );
        let attn = d.join("attention.csv");
        fs::write(&attn, "episode,step,head,i,j,weight\n").unwrap();
        cmd_export(args(ExportKind::Heatmap, &attn, &d, 1)).unwrap();
        assert_eq!(fs::read_to_string(d.join("heatmap.csv")).unwrap(), "step,i,j,weight\n");
        cmd_export(args(ExportKind::Entropy, &attn, &d, 1)).unwrap();
        assert_eq!(
            fs::read_to_string(d.join("entropy.csv")).unwrap(),
            "episode,agent,head,entropy\n"
        );
    }

    #[test]
    fn malformed_row_is_named() {
        let d = tmpdir("bad");
        let input = d.join("metrics.csv");
        fs::write(&input, "episode,exploration_rate\n0,0.5\n1,oops\n").unwrap();
        let err = cmd_export(args(ExportKind::Curves, &input, &d, 1)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("oops"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn heatmap_averages_heads_and_checks_sums() {
        let d = tmpdir("heat");
        let attn = d.join("attention.csv");
        fs::write(
            &attn,
            "episode,step,head,i,j,weight\n\
             0,0,0,1,2,0.25\n0,0,0,1,3,0.75\n\
             0,0,1,1,2,0.5\n0,0,1,1,3,0.5\n",
        )
        .unwrap();
        cmd_export(args(ExportKind::Heatmap, &attn, &d, 1)).unwrap();
        let out = fs::read_to_string(d.join("heatmap.csv")).unwrap();
        assert_eq!(out, "step,i,j,weight\n0,1,2,3.75000000e-1\n0,1,3,6.25000000e-1\n");

        fs::write(&attn, "episode,step,head,i,j,weight\n0,0,0,1,2,0.25\n0,0,0,1,3,0.70\n").unwrap();
        let err = cmd_export(args(ExportKind::Heatmap, &attn, &d, 1)).unwrap_err();
        assert!(err.to_string().contains("sum to"), "{err}");
    }

    #[test]
    fn entropy_from_both_sources() {
        let d = tmpdir("entropy");
        let metrics = d.join("metrics.csv");
        fs::write(
            &metrics,
            "episode,attn_entropy_h0,attn_entropy_h1\n0,0.0,6.93147181e-1\n",
        )
        .unwrap();
        cmd_export(args(ExportKind::Entropy, &metrics, &d, 1)).unwrap();
        let out = fs::read_to_string(d.join("entropy.csv")).unwrap();
        assert_eq!(
            out,
            "episode,agent,head,entropy\n0,-1,0,0.00000000e0\n0,-1,1,6.93147181e-1\n"
        );

        let attn = d.join("attention.csv");
        // One agent, one head, two steps: entropies ln 2 and 0; mean is ln 2 / 2.
        fs::write(
            &attn,
            "episode,step,head,i,j,weight\n\
             0,0,0,1,2,0.5\n0,0,0,1,3,0.5\n\
             0,1,0,1,2,1.0\n0,1,0,1,3,0.0\n",
        )
        .unwrap();
        cmd_export(args(ExportKind::Entropy, &attn, &d, 1)).unwrap();
        let out = fs::read_to_string(d.join("entropy.csv")).unwrap();
        let expected = 0.5 * core::f64::consts::LN_2;
        assert_eq!(out, format!("episode,agent,head,entropy\n0,1,0,{}\n", fmt_f64(expected)));
    }
}
