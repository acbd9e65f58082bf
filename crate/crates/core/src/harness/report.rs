use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result, ResultsTable};
use crate::corpus::{DistributionStats, LabelMap};

pub const COLUMNS: [&str; 7] = ["Method", "Feature", "Group", "Accuracy", "Macro-F1", "DPD", "EOD"];
const FAILED: &str = "—";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl TableFormat {
    pub const ALL: [TableFormat; 3] = [TableFormat::Csv, TableFormat::Json, TableFormat::Markdown];

    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
            TableFormat::Markdown => "md",
        }
    }
}

impl FromStr for TableFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            _ => Err(HarnessError::Config(format!("unknown format '{s}'"))),
        }
    }
}

fn cells(table: &ResultsTable) -> Vec<[String; 7]> {
    table
        .rows
        .iter()
        .map(|row| {
            let num = |f: fn(&crate::fairmetrics::FairnessReport) -> f64| {
                row.report
                    .as_ref()
                    .map_or_else(|| FAILED.to_string(), |r| format!("{:.3}", f(r)))
            };
            [
                row.condition.display().to_string(),
                row.task.display().to_string(),
                "All".to_string(),
                num(|r| r.accuracy),
                num(|r| r.macro_f1),
                num(|r| r.dpd),
                num(|r| r.eod),
            ]
        })
        .collect()
}

/// Render the table. CSV and markdown show the seven table columns with
/// three decimals; JSON carries the full rows at full precision.
pub fn emit_table(table: &ResultsTable, format: TableFormat) -> Result<String> {
    if table.rows.is_empty() {
        return Err(HarnessError::Config("cannot emit an empty table".into()));
    }
    match format {
        TableFormat::Json => {
            let mut s = serde_json::to_string_pretty(table)?;
            s.push('\n');
            Ok(s)
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COLUMNS)?;
            for row in cells(table) {
                w.write_record(&row)?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("utf-8 fields"))
        }
        TableFormat::Markdown => {
            let mut s = String::new();
            writeln!(s, "| {} |", COLUMNS.join(" | ")).unwrap();
            writeln!(s, "|{}", "---|".repeat(COLUMNS.len())).unwrap();
            for row in cells(table) {
                writeln!(s, "| {} |", row.join(" | ")).unwrap();
            }
            Ok(s)
        }
    }
}

pub fn parse_table_json(s: &str) -> Result<ResultsTable> {
    Ok(serde_json::from_str(s)?)
}

/// Write via a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| HarnessError::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        HarnessError::io(path, e)
    })
}

/// Write `results.<ext>` into `dir`; returns the path.
pub fn write_table(table: &ResultsTable, format: TableFormat, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(format!("results.{}", format.extension()));
    write_atomic(&path, emit_table(table, format)?.as_bytes())?;
    Ok(path)
}

/// Distribution tables and x/y plot data for the splits:
///
/// - `gender_distribution.csv`: `split,gender,count,percent`
/// - `profession_distribution.csv`: `profession,<split>...` counts
/// - `profession_gender.csv`: per-profession gender fractions
/// - `distribution.json`: all of the above
/// - `gender_<split>.dat`, `profession_<split>.dat`: two-column plot data
pub fn emit_distribution_report(
    stats: &DistributionStats,
    gender: &LabelMap,
    profession: &LabelMap,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
        Ok(())
    };
    let gname = |g: usize| gender.name(g as u32).unwrap_or("?").to_string();
    let pname = |p: usize| {
        profession
            .name(p as u32)
            .map_or_else(|| format!("profession_{p}"), str::to_string)
    };

    let mut s = String::from("split,gender,count,percent\n");
    for sp in &stats.splits {
        for g in 0..2 {
            writeln!(s, "{},{},{},{:.4}", sp.split, gname(g), sp.gender_counts[g], sp.gender_pct[g]).unwrap();
        }
    }
    put("gender_distribution.csv".into(), s)?;

    let k = stats.profession_gender_ratio.len();
    let mut s = String::from("profession");
    for sp in &stats.splits {
        write!(s, ",{}", sp.split).unwrap();
    }
    s.push('\n');
    for p in 0..k {
        s.push_str(&pname(p));
        for sp in &stats.splits {
            write!(s, ",{}", sp.profession_counts.get(p).copied().unwrap_or(0)).unwrap();
        }
        s.push('\n');
    }
    put("profession_distribution.csv".into(), s)?;

    let mut s = format!("profession,{},{}\n", gname(0), gname(1));
    for (p, r) in stats.profession_gender_ratio.iter().enumerate() {
        writeln!(s, "{},{:.4},{:.4}", pname(p), r[0], r[1]).unwrap();
    }
    put("profession_gender.csv".into(), s)?;

    let mut json = serde_json::to_string_pretty(stats)?;
    json.push('\n');
    put("distribution.json".into(), json)?;

    for sp in &stats.splits {
        let mut s = String::from("# gender percent\n");
        for g in 0..2 {
            writeln!(s, "{} {:.4}", gname(g), sp.gender_pct[g]).unwrap();
        }
        put(format!("gender_{}.dat", sp.split), s)?;
        let mut s = String::from("# profession count\n");
        for p in 0..k {
            writeln!(s, "{} {}", pname(p), sp.profession_counts.get(p).copied().unwrap_or(0)).unwrap();
        }
        put(format!("profession_{}.dat", sp.split), s)?;
    }
    Ok(written)
}
