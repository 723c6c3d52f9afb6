//! Reader for the MATPOWER case text format (`mpc.bus`, `mpc.gen`,
//! `mpc.branch`, `mpc.gencost`, `mpc.baseMVA`).
//!
//! Only the fields used by a DC dispatch are interpreted; AC data is ignored.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::market::{BidFunction, Bidder, Bus, CaseMeta, Line, MarketInstance};

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Ratings at or above this value are placeholders for "no limit"
    /// (the IEEE test cases use 9900 MVA).
    pub unlimited_rating: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { unlimited_rating: 9900.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedCase {
    pub instance: MarketInstance,
    pub warnings: Vec<String>,
}

struct Matrix {
    rows: Vec<Vec<f64>>,
    /// Source line of each row, for error messages.
    lines: Vec<usize>,
}

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, column, message: message.into() }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Matrix being read across lines.
struct OpenMatrix {
    key: String,
    matrix: Matrix,
    row: Vec<f64>,
}

impl OpenMatrix {
    /// Consumes matrix content from one source line; true once `]` is seen.
    fn feed(&mut self, line_no: usize, raw: &str, content: &str) -> Result<bool> {
        let (body, done) = match content.find(']') {
            Some(i) => (&content[..i], true),
            None => (content, false),
        };
        for (ci, piece) in body.split(';').enumerate() {
            if ci > 0 {
                self.end_row(line_no);
            }
            for tok in piece.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                let col = raw.find(tok).unwrap_or(0) + 1;
                let v: f64 = tok.parse().map_err(|_| {
                    parse_error(line_no, col, format!("expected a number in mpc.{}, found {tok:?}", self.key))
                })?;
                self.row.push(v);
            }
        }
        // a line break also ends a row
        self.end_row(line_no);
        Ok(done)
    }

    fn end_row(&mut self, line_no: usize) {
        if !self.row.is_empty() {
            self.matrix.rows.push(std::mem::take(&mut self.row));
            self.matrix.lines.push(line_no);
        }
    }
}

type Scanned = (HashMap<String, f64>, HashMap<String, Matrix>, Option<String>);

/// Scalars and matrices assigned to `mpc.<name>`.
fn scan(text: &str) -> Result<Scanned> {
    let mut scalars = HashMap::new();
    let mut matrices = HashMap::new();
    let mut name = None;
    let mut open: Option<OpenMatrix> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = strip_comment(raw);
        if let Some(mut m) = open.take() {
            if m.feed(line_no, raw, line)? {
                matrices.insert(m.key, m.matrix);
            } else {
                open = Some(m);
            }
            continue;
        }
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("function") {
            if let Some(eq) = rest.find('=') {
                name = Some(rest[eq + 1..].trim().trim_end_matches(';').to_string());
            }
            continue;
        }
        let Some(rest) = trimmed.strip_prefix("mpc.") else { continue };
        let Some(eq) = rest.find('=') else {
            return Err(parse_error(line_no, raw.find("mpc.").unwrap_or(0) + 1, "expected an assignment"));
        };
        let key = rest[..eq].trim().to_string();
        let value = rest[eq + 1..].trim();
        if let Some(body) = value.strip_prefix('[') {
            let mut m = OpenMatrix { key, matrix: Matrix { rows: Vec::new(), lines: Vec::new() }, row: Vec::new() };
            if m.feed(line_no, raw, body)? {
                matrices.insert(m.key, m.matrix);
            } else {
                open = Some(m);
            }
        } else {
            let v = value.trim_end_matches(';').trim();
            if v.starts_with('\'') || v.starts_with('"') {
                continue;
            }
            let col = raw.find(v).unwrap_or(0) + 1;
            let x: f64 = v.parse().map_err(|_| parse_error(line_no, col, format!("expected a number for mpc.{key}")))?;
            scalars.insert(key, x);
        }
    }
    if let Some(m) = open {
        return Err(parse_error(text.lines().count(), 1, format!("unterminated matrix mpc.{}", m.key)));
    }
    Ok((scalars, matrices, name))
}

fn need<'m>(m: &'m HashMap<String, Matrix>, key: &str, min_cols: usize) -> Result<&'m Matrix> {
    let mat = m.get(key).ok_or_else(|| parse_error(0, 0, format!("missing matrix mpc.{key}")))?;
    for (r, row) in mat.rows.iter().enumerate() {
        if row.len() < min_cols {
            return Err(parse_error(
                mat.lines[r],
                1,
                format!("mpc.{key} row {} has {} columns, expected at least {min_cols}", r + 1, row.len()),
            ));
        }
    }
    Ok(mat)
}

pub fn parse_matpower_case(text: &str) -> Result<ParsedCase> {
    parse_matpower_case_with(text, &ParseOptions::default())
}

pub fn parse_matpower_case_with(text: &str, opts: &ParseOptions) -> Result<ParsedCase> {
    let (scalars, matrices, name) = scan(text)?;
    let mut warnings = Vec::new();
    let base_mva = scalars.get("baseMVA").copied().unwrap_or_else(|| {
        warnings.push("mpc.baseMVA missing; using 100".into());
        100.0
    });
    let bus = need(&matrices, "bus", 3)?;
    let gen = need(&matrices, "gen", 10)?;
    let branch = need(&matrices, "branch", 4)?;
    let gencost = need(&matrices, "gencost", 4)?;

    let mut buses = Vec::new();
    let mut reference = None;
    for (r, row) in bus.rows.iter().enumerate() {
        let id = row[0] as usize;
        if row[0] < 0.0 || row[0].fract() != 0.0 {
            return Err(parse_error(bus.lines[r], 1, format!("bus id {} is not a nonnegative integer", row[0])));
        }
        if row[1] as i64 == 3 && reference.is_none() {
            reference = Some(id);
        }
        let mut demand = row[2];
        if demand < 0.0 {
            warnings.push(format!("bus {id}: negative demand {demand} MW set to 0"));
            demand = 0.0;
        }
        buses.push(Bus { id, demand });
    }
    let reference_bus = match reference {
        Some(r) => r,
        None => {
            let first = buses.first().map(|b| b.id).unwrap_or(0);
            warnings.push(format!("no reference bus (type 3); using bus {first}"));
            first
        }
    };
    let known: std::collections::HashSet<usize> = buses.iter().map(|b| b.id).collect();

    let mut lines = Vec::new();
    let mut placeholder_limits = 0;
    for (r, row) in branch.rows.iter().enumerate() {
        let (from, to) = (row[0] as usize, row[1] as usize);
        for end in [from, to] {
            if !known.contains(&end) {
                return Err(parse_error(branch.lines[r], 1, format!("branch references unknown bus {end}")));
            }
        }
        if row.len() > 10 && row[10] <= 0.0 {
            warnings.push(format!("branch {from}-{to} out of service; skipped"));
            continue;
        }
        let x = row[3];
        if x == 0.0 {
            return Err(parse_error(branch.lines[r], 1, format!("branch {from}-{to} has zero reactance")));
        }
        let rate = if row.len() > 5 { row[5] } else { 0.0 };
        let limit = if rate <= 0.0 {
            None
        } else if rate >= opts.unlimited_rating {
            placeholder_limits += 1;
            None
        } else {
            Some(rate)
        };
        lines.push(Line { from, to, susceptance: 1.0 / x.abs(), limit });
    }
    if placeholder_limits > 0 {
        warnings.push(format!("{placeholder_limits} branch ratings >= {} treated as unlimited", opts.unlimited_rating));
    }

    let mut bidders = Vec::new();
    let mut dropped_constants = 0;
    for (r, row) in gen.rows.iter().enumerate() {
        let bus_id = row[0] as usize;
        if !known.contains(&bus_id) {
            return Err(parse_error(gen.lines[r], 1, format!("generator {} on unknown bus {bus_id}", r + 1)));
        }
        if row[7] <= 0.0 {
            warnings.push(format!("generator {} out of service; skipped", r + 1));
            continue;
        }
        let (pmax, pmin) = (row[8], row[9]);
        if pmax <= 0.0 {
            warnings.push(format!("generator {} has no positive capacity; skipped", r + 1));
            continue;
        }
        if pmin > 0.0 {
            warnings.push(format!("generator {}: PMIN {pmin} MW relaxed to 0", r + 1));
        }
        let cost = gencost.rows.get(r).ok_or_else(|| {
            parse_error(gencost.lines.last().copied().unwrap_or(0), 1, format!("no gencost row for generator {}", r + 1))
        })?;
        let model = cost[0] as u32;
        if model != 2 {
            return Err(Error::UnsupportedCost { row: r + 1, model });
        }
        let n = cost[3] as usize;
        if cost.len() < 4 + n {
            return Err(parse_error(gencost.lines[r], 1, format!("gencost row {} lists {n} coefficients but has fewer", r + 1)));
        }
        let c = &cost[4..4 + n];
        let (a, b, c0) = match n {
            0 => (0.0, 0.0, 0.0),
            1 => (0.0, 0.0, c[0]),
            2 => (0.0, c[0], c[1]),
            3 => (c[0], c[1], c[2]),
            _ => return Err(Error::UnsupportedCost { row: r + 1, model }),
        };
        if c0 != 0.0 {
            dropped_constants += 1;
        }
        if a < 0.0 || b < 0.0 {
            return Err(parse_error(gencost.lines[r], 1, format!("gencost row {} has negative coefficients", r + 1)));
        }
        bidders.push(Bidder {
            id: bidders.len() + 1,
            bus: bus_id,
            true_cost: BidFunction::Quadratic { a, b, cap: pmax },
            supply_type: 1,
            owner: None,
        });
    }
    if dropped_constants > 0 {
        warnings.push(format!("{dropped_constants} gencost constant terms dropped so that cost(0) = 0"));
    }
    let meta = CaseMeta {
        name: name.unwrap_or_else(|| "matpower".into()),
        base_mva,
        reference_bus,
        types: 1,
        notes: warnings.clone(),
    };
    Ok(ParsedCase { instance: MarketInstance { buses, lines, bidders, d_linear: None, meta }, warnings })
}
