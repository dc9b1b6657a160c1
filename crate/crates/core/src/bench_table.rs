//! Benchmark tables: per-architecture scores on every benchmark column,
//! CSV import/export with partial-failure reporting, and rank-correlation
//! reports between benchmark columns.
//!
//! The CSV dialect is deliberately plain: UTF-8, comma-separated, `.`
//! decimal, header required, no quoting (fields must not contain commas).
//! Benchmark columns carry their metadata in the header as
//! `score:<name>:<group>:<+|->`; unknown header names are tolerated and
//! their values ignored, so files with extra columns still import.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};

use crate::arch::{Architecture, SearchSpace};
use crate::error::{CoreError, Result};
use crate::objectives::kendall_tau;

/// Metadata of one benchmark (score) column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMeta {
    pub name: String,
    /// Task group the benchmark belongs to; free-form label.
    pub group: String,
    pub higher_is_better: bool,
}

impl ColumnMeta {
    pub fn new(name: &str, group: &str, higher_is_better: bool) -> Result<Self> {
        for (what, s) in [("column name", name), ("column group", group)] {
            if s.is_empty() {
                return Err(CoreError::Format(format!("{what} must not be empty")));
            }
            if s.contains([',', ':', '\n', '\r']) {
                return Err(CoreError::Format(format!(
                    "{what} {s:?} must not contain commas, colons, or line breaks"
                )));
            }
        }
        Ok(ColumnMeta {
            name: name.into(),
            group: group.into(),
            higher_is_better,
        })
    }

    fn header_token(&self) -> String {
        format!(
            "score:{}:{}:{}",
            self.name,
            self.group,
            if self.higher_is_better { '+' } else { '-' }
        )
    }
}

/// One benchmarked architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub arch_id: String,
    pub encoding: String,
    /// One score per benchmark column, in column order.
    pub scores: Vec<f64>,
    pub flops: u64,
    pub params: u64,
}

/// Scores of many architectures on many benchmarks. Every encoding decodes
/// under the space it was validated against and arch_ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    columns: Vec<ColumnMeta>,
    rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn new(columns: Vec<ColumnMeta>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for c in &columns {
            ColumnMeta::new(&c.name, &c.group, c.higher_is_better)?;
            if !names.insert(c.name.clone()) {
                return Err(CoreError::Format(format!("duplicate column name {}", c.name)));
            }
        }
        Ok(BenchTable {
            columns,
            rows: Vec::new(),
        })
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn rows(&self) -> &[BenchRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn find_column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Appends a row after checking it against the table invariants and the
    /// architecture space.
    pub fn push_row(&mut self, space: &SearchSpace, row: BenchRow) -> Result<()> {
        self.push_row_inner(Some(space), row)
    }

    fn push_row_inner(&mut self, space: Option<&SearchSpace>, row: BenchRow) -> Result<()> {
        if row.arch_id.is_empty() || row.arch_id.contains([',', '\n', '\r']) {
            return Err(CoreError::Format(format!(
                "arch_id {:?} must be non-empty and free of commas and line breaks",
                row.arch_id
            )));
        }
        if self.rows.iter().any(|r| r.arch_id == row.arch_id) {
            return Err(CoreError::Format(format!("duplicate arch_id {}", row.arch_id)));
        }
        match space {
            Some(space) => {
                Architecture::decode(&row.encoding, space)?;
            }
            None if row.encoding.is_empty() || row.encoding.contains([',', '\n', '\r']) => {
                return Err(CoreError::Format(format!(
                    "encoding {:?} must be non-empty and free of commas and line breaks",
                    row.encoding
                )));
            }
            None => {}
        }
        if row.scores.len() != self.columns.len() {
            return Err(CoreError::Format(format!(
                "{} scores for {} benchmark columns",
                row.scores.len(),
                self.columns.len()
            )));
        }
        if let Some(bad) = row.scores.iter().find(|s| !s.is_finite()) {
            return Err(CoreError::NonFinite {
                context: format!("benchmark score {bad} for {}", row.arch_id),
                step: None,
            });
        }
        self.rows.push(row);
        Ok(())
    }

    /// Canonical row order for merged or concatenated results.
    pub fn sort_by_arch_id(&mut self) {
        self.rows.sort_by(|a, b| a.arch_id.cmp(&b.arch_id));
    }

    pub fn column_scores(&self, col: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.scores[col]).collect()
    }
}

/// One rejected input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number in the file; the header is line 1.
    pub line: usize,
    pub message: String,
}

/// Import result: the retained rows plus everything that was rejected.
#[derive(Debug)]
pub struct BenchImport {
    pub table: BenchTable,
    pub rejected: Vec<LineError>,
    /// Header names that were tolerated but ignored.
    pub ignored_columns: Vec<String>,
}

/// Writes the table as CSV. Scores print in shortest-round-trip form, so an
/// export/import cycle reproduces the table exactly.
pub fn export_bench<W: Write>(table: &BenchTable, w: &mut W) -> Result<()> {
    let mut header = vec![
        "arch_id".to_string(),
        "encoding".to_string(),
        "flops".to_string(),
        "params".to_string(),
    ];
    header.extend(table.columns.iter().map(ColumnMeta::header_token));
    writeln!(w, "{}", header.join(","))?;
    for r in &table.rows {
        let mut fields = vec![
            r.arch_id.clone(),
            r.encoding.clone(),
            r.flops.to_string(),
            r.params.to_string(),
        ];
        fields.extend(r.scores.iter().map(|s| s.to_string()));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

enum Role {
    ArchId,
    Encoding,
    Flops,
    Params,
    Score(usize),
    Ignored,
}

/// Reads a benchmark CSV. A missing or unusable header fails the whole
/// import; individual bad rows (wrong field count, unparsable numbers,
/// undecodable or duplicate architectures) are collected with their line
/// numbers while every well-formed row is retained.
pub fn import_bench<R: Read>(reader: R, space: &SearchSpace) -> Result<BenchImport> {
    import_inner(reader, Some(space))
}

/// Like [`import_bench`] but without an architecture space: encodings are
/// kept verbatim instead of being decoded. Enough for score-only analyses
/// such as correlation reports.
pub fn import_bench_loose<R: Read>(reader: R) -> Result<BenchImport> {
    import_inner(reader, None)
}

fn import_inner<R: Read>(reader: R, space: Option<&SearchSpace>) -> Result<BenchImport> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| CoreError::Format("empty input: header row required".into()))?;

    let mut roles = Vec::new();
    let mut columns = Vec::new();
    let mut ignored = Vec::new();
    let mut seen_fixed = BTreeSet::new();
    for token in header.split(',') {
        let role = match token {
            "arch_id" => Role::ArchId,
            "encoding" => Role::Encoding,
            "flops" => Role::Flops,
            "params" => Role::Params,
            t if t.starts_with("score:") => {
                let parts: Vec<&str> = t.splitn(4, ':').collect();
                let [_, name, group, dir] = parts[..] else {
                    return Err(CoreError::Format(format!(
                        "benchmark column {t:?} must look like score:<name>:<group>:<+|->"
                    )));
                };
                let higher = match dir {
                    "+" => true,
                    "-" => false,
                    other => {
                        return Err(CoreError::Format(format!(
                            "benchmark column {t:?} direction must be + or -, got {other:?}"
                        )))
                    }
                };
                columns.push(ColumnMeta::new(name, group, higher)?);
                Role::Score(columns.len() - 1)
            }
            other => {
                ignored.push(other.to_string());
                Role::Ignored
            }
        };
        if !matches!(role, Role::Score(_) | Role::Ignored)
            && !seen_fixed.insert(token.to_string())
        {
            return Err(CoreError::Format(format!("duplicate header column {token:?}")));
        }
        roles.push(role);
    }
    for required in ["arch_id", "encoding", "flops", "params"] {
        if !seen_fixed.contains(required) {
            return Err(CoreError::Format(format!("header lacks required column {required:?}")));
        }
    }

    let mut table = BenchTable::new(columns)?;
    let mut rejected = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        match parse_row(&line, &roles, table.columns.len()) {
            Ok(row) => {
                if let Err(e) = table.push_row_inner(space, row) {
                    rejected.push(LineError {
                        line: line_no,
                        message: e.to_string(),
                    });
                }
            }
            Err(message) => rejected.push(LineError {
                line: line_no,
                message,
            }),
        }
    }
    Ok(BenchImport {
        table,
        rejected,
        ignored_columns: ignored,
    })
}

fn parse_row(line: &str, roles: &[Role], num_scores: usize) -> std::result::Result<BenchRow, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != roles.len() {
        return Err(format!(
            "{} fields where the header declares {}",
            fields.len(),
            roles.len()
        ));
    }
    let mut arch_id = None;
    let mut encoding = None;
    let mut flops = None;
    let mut params = None;
    let mut scores = vec![f64::NAN; num_scores];
    for (field, role) in fields.iter().zip(roles) {
        match role {
            Role::ArchId => arch_id = Some(field.to_string()),
            Role::Encoding => encoding = Some(field.to_string()),
            Role::Flops => {
                flops = Some(
                    field
                        .parse::<u64>()
                        .map_err(|e| format!("flops {field:?}: {e}"))?,
                )
            }
            Role::Params => {
                params = Some(
                    field
                        .parse::<u64>()
                        .map_err(|e| format!("params {field:?}: {e}"))?,
                )
            }
            Role::Score(k) => {
                scores[*k] = field
                    .parse::<f64>()
                    .map_err(|e| format!("score {field:?}: {e}"))?
            }
            Role::Ignored => {}
        }
    }
    Ok(BenchRow {
        arch_id: arch_id.expect("header guarantees arch_id"),
        encoding: encoding.expect("header guarantees encoding"),
        scores,
        flops: flops.expect("header guarantees flops"),
        params: params.expect("header guarantees params"),
    })
}

/// Tie-aware rank correlation between every pair of benchmark columns.
/// Values are oriented by their column's direction flag first, so the
/// matrix reads as agreement between quality rankings.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub names: Vec<String>,
    pub groups: Vec<String>,
    /// Row-major square matrix; symmetric with a unit diagonal.
    pub matrix: Vec<Vec<f64>>,
}

pub fn correlation_report(table: &BenchTable) -> Result<CorrelationReport> {
    if table.rows.len() < 2 {
        return Err(CoreError::InsufficientData(format!(
            "correlation needs at least 2 rows, got {}",
            table.rows.len()
        )));
    }
    if table.columns.is_empty() {
        return Err(CoreError::InsufficientData(
            "correlation needs at least one benchmark column".into(),
        ));
    }
    let n = table.columns.len();
    let oriented: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let sign = if table.columns[c].higher_is_better { 1.0 } else { -1.0 };
            table.column_scores(c).iter().map(|s| sign * s).collect()
        })
        .collect();
    let mut matrix = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let tau = kendall_tau(&oriented[i], &oriented[j])?;
            matrix[i][j] = tau;
            matrix[j][i] = tau;
        }
    }
    Ok(CorrelationReport {
        names: table.columns.iter().map(|c| c.name.clone()).collect(),
        groups: table.columns.iter().map(|c| c.group.clone()).collect(),
        matrix,
    })
}

impl CorrelationReport {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.matrix[i][j]
    }

    pub fn to_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = vec!["column".to_string(), "group".to_string()];
        header.extend(self.names.iter().cloned());
        writeln!(w, "{}", header.join(","))?;
        for (i, name) in self.names.iter().enumerate() {
            let mut fields = vec![name.clone(), self.groups[i].clone()];
            fields.extend(self.matrix[i].iter().map(|v| v.to_string()));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<CorrelationReport> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| CoreError::Format("empty input: header row required".into()))?;
        let head: Vec<&str> = header.split(',').collect();
        if head.len() < 3 || head[0] != "column" || head[1] != "group" {
            return Err(CoreError::Format(
                "correlation header must start with column,group".into(),
            ));
        }
        let names: Vec<String> = head[2..].iter().map(|s| s.to_string()).collect();
        let mut groups = Vec::new();
        let mut matrix = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != names.len() + 2 {
                return Err(CoreError::Format(format!(
                    "correlation row {} has {} fields, expected {}",
                    i + 2,
                    fields.len(),
                    names.len() + 2
                )));
            }
            let expected = names.get(matrix.len()).ok_or_else(|| {
                CoreError::Format(format!(
                    "more correlation rows than the {} declared columns",
                    names.len()
                ))
            })?;
            if fields[0] != expected.as_str() {
                return Err(CoreError::Format(format!(
                    "correlation row {} is labeled {:?}, expected {expected:?}",
                    i + 2,
                    fields[0],
                )));
            }
            groups.push(fields[1].to_string());
            let row: Vec<f64> = fields[2..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| CoreError::Format(format!("correlation value {f:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            matrix.push(row);
        }
        if matrix.len() != names.len() {
            return Err(CoreError::Format(format!(
                "{} correlation rows for {} columns",
                matrix.len(),
                names.len()
            )));
        }
        Ok(CorrelationReport {
            names,
            groups,
            matrix,
        })
    }

    /// Renders the matrix as an SVG heatmap: one shaded cell per pair,
    /// blue for negative, red for positive, labels on both axes.
    pub fn to_svg<W: Write>(&self, w: &mut W) -> Result<()> {
        const CELL: usize = 48;
        const LABEL: usize = 140;
        const PAD: usize = 10;
        let n = self.names.len();
        let width = LABEL + n * CELL + PAD;
        let height = LABEL + n * CELL + PAD;
        writeln!(
            w,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
             font-family=\"monospace\" font-size=\"11\">"
        )?;
        writeln!(w, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>")?;
        for (j, name) in self.names.iter().enumerate() {
            let x = LABEL + j * CELL + CELL / 2;
            let y = LABEL - 6;
            writeln!(
                w,
                "<text x=\"{x}\" y=\"{y}\" text-anchor=\"start\" \
                 transform=\"rotate(-60 {x} {y})\">{}</text>",
                xml_escape(name)
            )?;
        }
        for (i, name) in self.names.iter().enumerate() {
            let y = LABEL + i * CELL + CELL / 2 + 4;
            writeln!(
                w,
                "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{}</text>",
                LABEL - 6,
                xml_escape(name)
            )?;
        }
        for i in 0..n {
            for j in 0..n {
                let tau = self.matrix[i][j];
                let (r, g, b) = heat_color(tau);
                let x = LABEL + j * CELL;
                let y = LABEL + i * CELL;
                writeln!(
                    w,
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                     fill=\"#{r:02x}{g:02x}{b:02x}\" stroke=\"#808080\" stroke-width=\"1\">\
                     <title>{} vs {}: {tau}</title></rect>",
                    xml_escape(&self.names[i]),
                    xml_escape(&self.names[j])
                )?;
                let text_fill = if tau.abs() > 0.6 { "white" } else { "black" };
                writeln!(
                    w,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{text_fill}\">{:.2}</text>",
                    x + CELL / 2,
                    y + CELL / 2 + 4,
                    tau
                )?;
            }
        }
        writeln!(w, "</svg>")?;
        Ok(())
    }
}

fn heat_color(tau: f64) -> (u8, u8, u8) {
    let t = tau.clamp(-1.0, 1.0);
    let lerp = |a: u8, b: u8, f: f64| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
    if t >= 0.0 {
        // white -> deep red
        (lerp(255, 178, t), lerp(255, 24, t), lerp(255, 43, t))
    } else {
        // white -> deep blue
        (lerp(255, 33, -t), lerp(255, 102, -t), lerp(255, 172, -t))
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
