//! Output files: the SPF field dump, SPMASK cells, and the `key = value`
//! and column text reports.

use std::fmt::{Display, Write as _};
use std::io;
use std::path::Path;

use specpart_core::grid::Grid;

const SPF_MAGIC: &[u8] = b"SPF1\n";

/// Groups of fields over the full `nx × ny` lattice, as stored in SPF files.
#[derive(Debug, Clone, PartialEq)]
pub struct SpfFields {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    /// `groups[i][l]` is a lattice vector of length `nx·ny`, row-major.
    pub groups: Vec<Vec<Vec<f64>>>,
}

impl SpfFields {
    /// Lattice view of per-group dof fields; masked-out nodes hold 0.
    pub fn from_dofs(grid: &Grid<f64>, groups: &[Vec<Vec<f64>>]) -> Self {
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
            h: grid.h(),
            groups: groups
                .iter()
                .map(|g| g.iter().map(|f| grid.to_lattice(f)).collect())
                .collect(),
        }
    }

    pub fn ks(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = SPF_MAGIC.to_vec();
        let ks: Vec<String> = self.ks().iter().map(usize::to_string).collect();
        let header = format!("{} {} {} {} {}\n", self.groups.len(), ks.join(" "), self.nx, self.ny, self.h);
        out.extend_from_slice(header.as_bytes());
        for g in &self.groups {
            for f in g {
                for v in f {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let rest = bytes
            .strip_prefix(SPF_MAGIC)
            .ok_or("missing SPF1 magic line")?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or("unterminated header line")?;
        let header = std::str::from_utf8(&rest[..nl]).map_err(|_| "header is not ASCII")?;
        let nums: Vec<&str> = header.split_whitespace().collect();
        let bad = |what: &str| format!("bad {what} in header `{header}`");
        let m: usize = nums.first().and_then(|s| s.parse().ok()).ok_or_else(|| bad("m"))?;
        if m == 0 || nums.len() != m + 4 {
            return Err(bad("field count"));
        }
        let ks = nums[1..=m]
            .iter()
            .map(|s| s.parse::<usize>().ok().filter(|&k| k > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("k list"))?;
        let nx: usize = nums[m + 1].parse().map_err(|_| bad("nx"))?;
        let ny: usize = nums[m + 2].parse().map_err(|_| bad("ny"))?;
        let h: f64 = nums[m + 3].parse().map_err(|_| bad("h"))?;
        let body = &rest[nl + 1..];
        let len = nx * ny;
        let need = ks.iter().sum::<usize>() * len * 8;
        if body.len() != need {
            return Err(format!("expected {need} bytes of field data, found {}", body.len()));
        }
        let mut words = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let groups = ks
            .iter()
            .map(|&k| (0..k).map(|_| words.by_ref().take(len).collect()).collect())
            .collect();
        Ok(Self { nx, ny, h, groups })
    }

    /// Per-group dof fields on `grid`; fails if the lattice does not match.
    pub fn to_dofs(&self, grid: &Grid<f64>) -> Result<Vec<Vec<Vec<f64>>>, String> {
        if (self.nx, self.ny) != (grid.nx(), grid.ny()) || self.h != grid.h() {
            return Err(format!(
                "file lattice {}×{} (h = {}) does not match the configured grid {}×{} (h = {})",
                self.nx,
                self.ny,
                self.h,
                grid.nx(),
                grid.ny(),
                grid.h()
            ));
        }
        self.groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|f| grid.from_lattice(f).map_err(|e| e.to_string()))
                    .collect()
            })
            .collect()
    }
}

/// Ordered `key = value` lines.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct KeyValues {
    lines: Vec<(String, String)>,
}

impl KeyValues {
    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn push_list<T: Display>(&mut self, key: impl Into<String>, values: &[T]) {
        self.push(key, join(values));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Self {
        let lines = text
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { lines }
    }
}

pub fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

/// Whitespace-separated columns with a `#` header line.
pub fn columns(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = format!("# {}\n", header.join(" "));
    for r in rows {
        out.push_str(&join(r));
        out.push('\n');
    }
    out
}

pub fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> io::Result<()> {
    std::fs::write(dir.join(name), contents)
}
