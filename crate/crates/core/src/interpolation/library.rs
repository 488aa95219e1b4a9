//! Statistic library and its text file format.
//!
//! ```text
//! AWFLIB 1
//! GRID <k_min> <k_max> <n_targets>
//! <t_index> <c_t>                                  (n_targets lines)
//! CELLS <count>
//! <K> <t_index> <c_t> <s_kt> <eta> <n_samples>     (count lines)
//! ```
//!
//! Fields are tab separated and reals carry 17 significant digits, so a
//! save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{AwError, Result};
use crate::sampling::{LibraryCell, TargetGrid};

pub const LIBRARY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StatLibrary {
    pub version: u32,
    grid: TargetGrid,
    cells: BTreeMap<(usize, usize), LibraryCell>,
}

impl StatLibrary {
    /// Validates that every (K, target) pair is present once, thresholds lie
    /// in (0, 1] and increase strictly with the target for each K.
    pub fn new(grid: TargetGrid, cells: Vec<LibraryCell>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for cell in cells {
            let key = (cell.k, cell.t_index);
            if cell.k < grid.k_min() || cell.k > grid.k_max() || cell.t_index >= grid.len() {
                return Err(AwError::InvalidInput(format!(
                    "cell K={} t={} lies outside the grid",
                    cell.k, cell.t_index
                )));
            }
            if cell.c_t != grid.c_values()[cell.t_index] {
                return Err(AwError::InvalidInput(format!(
                    "cell K={} t={} has target {:e}, grid says {:e}",
                    cell.k,
                    cell.t_index,
                    cell.c_t,
                    grid.c_values()[cell.t_index]
                )));
            }
            if !(cell.s_kt > 0.0 && cell.s_kt <= 1.0) {
                return Err(AwError::InvalidInput(format!(
                    "cell K={} t={} threshold {} outside (0, 1]",
                    cell.k, cell.t_index, cell.s_kt
                )));
            }
            if map.insert(key, cell).is_some() {
                return Err(AwError::InvalidInput(format!(
                    "duplicate cell K={} t={}",
                    key.0, key.1
                )));
            }
        }
        for k in grid.k_min()..=grid.k_max() {
            let mut prev: Option<f64> = None;
            // Targets are stored in decreasing order, so thresholds must decrease too.
            for t in 0..grid.len() {
                let cell = map
                    .get(&(k, t))
                    .ok_or_else(|| AwError::InvalidInput(format!("missing cell K={k} t={t}")))?;
                if let Some(p) = prev {
                    if !(cell.s_kt < p) {
                        return Err(AwError::InvalidInput(format!(
                            "thresholds for K={k} are not strictly increasing in the target at t={t}"
                        )));
                    }
                }
                prev = Some(cell.s_kt);
            }
        }
        Ok(Self {
            version: LIBRARY_VERSION,
            grid,
            cells: map,
        })
    }

    pub fn grid(&self) -> &TargetGrid {
        &self.grid
    }

    pub fn cells(&self) -> impl Iterator<Item = &LibraryCell> {
        self.cells.values()
    }

    pub fn cell(&self, k: usize, t_index: usize) -> Option<&LibraryCell> {
        self.cells.get(&(k, t_index))
    }

    pub fn contains_k(&self, k: usize) -> bool {
        k >= self.grid.k_min() && k <= self.grid.k_max()
    }

    /// Knots `(ln s_kt, ln c_t)` for one K in increasing order.
    pub fn knots(&self, k: usize) -> Result<Vec<(f64, f64)>> {
        if !self.contains_k(k) {
            return Err(AwError::KNotInLibrary {
                k,
                kmin: self.grid.k_min(),
                kmax: self.grid.k_max(),
            });
        }
        Ok((0..self.grid.len())
            .rev()
            .map(|t| {
                let c = &self.cells[&(k, t)];
                (c.s_kt.ln(), c.c_t.ln())
            })
            .collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let g = &self.grid;
        let _ = writeln!(out, "AWFLIB {}", self.version);
        let _ = writeln!(out, "GRID\t{}\t{}\t{}", g.k_min(), g.k_max(), g.len());
        for (t, c) in g.c_values().iter().enumerate() {
            let _ = writeln!(out, "{t}\t{c:.16e}");
        }
        let _ = writeln!(out, "CELLS\t{}", self.cells.len());
        for c in self.cells.values() {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.16e}\t{:.16e}\t{:.16e}\t{}",
                c.k, c.t_index, c.c_t, c.s_kt, c.eta, c.n_samples
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| AwError::Format {
                line: 0,
                reason: format!("file ends before {what}"),
            })
        };
        let fmt_err = |line: usize, reason: String| AwError::Format { line, reason };

        let (ln, header) = next("the header")?;
        let version: u32 = header
            .strip_prefix("AWFLIB ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| fmt_err(ln, "expected `AWFLIB <version>`".into()))?;
        if version != LIBRARY_VERSION {
            return Err(fmt_err(
                ln,
                format!("unsupported library version {version}"),
            ));
        }

        let (ln, grid_line) = next("the GRID line")?;
        let f: Vec<&str> = grid_line.split_whitespace().collect();
        if f.len() != 4 || f[0] != "GRID" {
            return Err(fmt_err(
                ln,
                "expected `GRID <k_min> <k_max> <n_targets>`".into(),
            ));
        }
        let k_min: usize = parse_field(f[1], ln, "k_min")?;
        let k_max: usize = parse_field(f[2], ln, "k_max")?;
        let n_targets: usize = parse_field(f[3], ln, "n_targets")?;
        let mut c_values = Vec::with_capacity(n_targets);
        for t in 0..n_targets {
            let (ln, l) = next("the end of the grid block")?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 2 {
                return Err(fmt_err(ln, "expected `<t_index> <c_t>`".into()));
            }
            let idx: usize = parse_field(f[0], ln, "t_index")?;
            if idx != t {
                return Err(fmt_err(
                    ln,
                    format!("expected target index {t}, found {idx}"),
                ));
            }
            c_values.push(parse_field::<f64>(f[1], ln, "c_t")?);
        }
        let grid =
            TargetGrid::new(c_values, k_min, k_max).map_err(|e| fmt_err(ln, e.to_string()))?;

        let (ln, cells_line) = next("the CELLS line")?;
        let f: Vec<&str> = cells_line.split_whitespace().collect();
        if f.len() != 2 || f[0] != "CELLS" {
            return Err(fmt_err(ln, "expected `CELLS <count>`".into()));
        }
        let count: usize = parse_field(f[1], ln, "count")?;
        let mut cells = Vec::with_capacity(count);
        let mut last_line = ln;
        for _ in 0..count {
            let (ln, l) = next("the last cell")?;
            last_line = ln;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 6 {
                return Err(fmt_err(ln, format!("expected 6 fields, found {}", f.len())));
            }
            let cell = LibraryCell {
                k: parse_field(f[0], ln, "K")?,
                t_index: parse_field(f[1], ln, "t_index")?,
                c_t: parse_field(f[2], ln, "c_t")?,
                s_kt: parse_field(f[3], ln, "s_kt")?,
                eta: parse_field(f[4], ln, "eta")?,
                n_samples: parse_field(f[5], ln, "n_samples")?,
            };
            if !(cell.s_kt > 0.0 && cell.s_kt <= 1.0) {
                return Err(fmt_err(
                    ln,
                    format!("threshold {} outside (0, 1]", cell.s_kt),
                ));
            }
            cells.push(cell);
        }
        if let Some((ln, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(fmt_err(ln, format!("unexpected trailing content `{l}`")));
        }
        StatLibrary::new(grid, cells).map_err(|e| fmt_err(last_line, e.to_string()))
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<T> {
    s.parse().map_err(|_| AwError::Format {
        line,
        reason: format!("cannot parse {name} from `{s}`"),
    })
}

pub fn save_library(lib: &StatLibrary, path: &Path) -> Result<()> {
    std::fs::write(path, lib.to_text())?;
    Ok(())
}

pub fn load_library(path: &Path) -> Result<StatLibrary> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AwError::Io(format!("{}: {e}", path.display())))?;
    StatLibrary::parse(&text)
}
