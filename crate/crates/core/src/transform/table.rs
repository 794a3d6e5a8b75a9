use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Transform;
use crate::error::{Error, Result};
use crate::model::{DomainSpec, Margins, Region};
use crate::numerics::ComplexMatrix;

pub const TABLE_MAGIC: &[u8; 8] = b"KKLTABLE";
pub const TABLE_VERSION: u32 = 1;

/// Tensor grid; axis 0 varies slowest in the linear node index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Self {
        Self { lower, upper, counts }
    }

    /// Grid over the bounding box of `cl(O)`.
    pub fn over(domain: &DomainSpec, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != domain.dim() {
            return Err(Error::Dimension { expected: domain.dim(), got: counts.len() });
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config("grid node counts must be positive".into()));
        }
        let (lower, upper) = domain.bounding_box();
        Ok(Self { lower, upper, counts })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    fn coord(&self, axis: usize, i: usize) -> f64 {
        let c = self.counts[axis];
        let (l, u) = (self.lower[axis], self.upper[axis]);
        if c == 1 {
            0.5 * (l + u)
        } else if i == c - 1 {
            u
        } else {
            l + (u - l) * i as f64 / (c - 1) as f64
        }
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            out[axis] = idx % self.counts[axis];
            idx /= self.counts[axis];
        }
        out
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx).iter().enumerate().map(|(axis, &i)| self.coord(axis, i)).collect()
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|a| if self.counts[a] > 1 { (self.upper[a] - self.lower[a]) / (self.counts[a] - 1) as f64 } else { 0.0 })
            .collect()
    }

    /// Length of the cell diagonal.
    pub fn cell_diameter(&self) -> f64 {
        self.spacing().iter().map(|h| h * h).sum::<f64>().sqrt()
    }
}

/// Metadata identifying the transform a table was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct TableInfo {
    pub fingerprint: u64,
    pub model_label: String,
    pub transform_label: String,
    pub eigenvalues: Vec<Complex64>,
    pub horizon: f64,
    pub quad_tol: f64,
}

/// Sampled values of a transform over a grid on `cl(O)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformTable {
    pub info: TableInfo,
    pub config_hash: u64,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub domain: DomainSpec,
    pub grid: Grid,
    pub(crate) values: Vec<Complex64>,
}

/// Evaluates `transform` at every grid node, in parallel, in node order.
pub fn tabulate<T: Transform + ?Sized>(transform: &T, grid: Grid) -> Result<TransformTable> {
    let (n, m, p) = (transform.state_dim(), transform.rows(), transform.cols());
    if grid.dim() != n {
        return Err(Error::Dimension { expected: n, got: grid.dim() });
    }
    let nodes: Vec<ComplexMatrix> = (0..grid.num_nodes())
        .into_par_iter()
        .map(|idx| {
            let value = transform
                .eval(&grid.node(idx))
                .map_err(|e| Error::Node { node: idx, source: Box::new(e) })?;
            if value.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::Node {
                    node: idx,
                    source: Box::new(Error::TableFormat("non-finite transform value".into())),
                });
            }
            Ok(value)
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(nodes.len() * m * p);
    for v in &nodes {
        for i in 0..m {
            for j in 0..p {
                values.push(v[(i, j)]);
            }
        }
    }
    Ok(TransformTable {
        info: transform.info(),
        config_hash: 0,
        seed: 0,
        n,
        m,
        p,
        domain: transform.domain().clone(),
        grid,
        values,
    })
}

impl TransformTable {
    pub fn fingerprint(&self) -> u64 {
        self.info.fingerprint
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.grid.node(idx)
    }

    pub fn value(&self, idx: usize) -> ComplexMatrix {
        let mp = self.m * self.p;
        let s = &self.values[idx * mp..(idx + 1) * mp];
        ComplexMatrix::from_fn(self.m, self.p, |i, j| s[i * self.p + j])
    }

    pub(crate) fn value_slice(&self, idx: usize) -> &[Complex64] {
        let mp = self.m * self.p;
        &self.values[idx * mp..(idx + 1) * mp]
    }

    /// Node indices lying in `cl(O)`, ascending.
    pub fn domain_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.domain.contains(&self.node(i))).collect()
    }

    pub fn check_fingerprint(&self, expected: u64) -> Result<()> {
        if self.fingerprint() != expected {
            return Err(Error::Fingerprint { table: self.fingerprint(), expected });
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TABLE_MAGIC)?;
        w.write_u32::<LittleEndian>(TABLE_VERSION)?;
        w.write_u64::<LittleEndian>(self.info.fingerprint)?;
        w.write_u64::<LittleEndian>(self.config_hash)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u32::<LittleEndian>(self.n as u32)?;
        w.write_u32::<LittleEndian>(self.m as u32)?;
        w.write_u32::<LittleEndian>(self.p as u32)?;
        w.write_f64::<LittleEndian>(self.info.horizon)?;
        w.write_f64::<LittleEndian>(self.info.quad_tol)?;
        match &self.domain.region {
            Region::Box { lower, upper } => {
                w.write_u8(0)?;
                for (l, u) in lower.iter().zip(upper) {
                    w.write_f64::<LittleEndian>(*l)?;
                    w.write_f64::<LittleEndian>(*u)?;
                }
            }
            Region::Ball { center, radius } => {
                w.write_u8(1)?;
                for c in center {
                    w.write_f64::<LittleEndian>(*c)?;
                }
                w.write_f64::<LittleEndian>(*radius)?;
            }
        }
        let mg = self.domain.margins;
        for v in [mg.upsilon, mg.distinguish, mg.cutoff] {
            w.write_f64::<LittleEndian>(v)?;
        }
        for a in 0..self.n {
            w.write_u32::<LittleEndian>(self.grid.counts[a] as u32)?;
            w.write_f64::<LittleEndian>(self.grid.lower[a])?;
            w.write_f64::<LittleEndian>(self.grid.upper[a])?;
        }
        for l in &self.info.eigenvalues {
            w.write_f64::<LittleEndian>(l.re)?;
            w.write_f64::<LittleEndian>(l.im)?;
        }
        for s in [&self.info.model_label, &self.info.transform_label] {
            w.write_u32::<LittleEndian>(s.len() as u32)?;
            w.write_all(s.as_bytes())?;
        }
        for v in &self.values {
            w.write_f64::<LittleEndian>(v.re)?;
            w.write_f64::<LittleEndian>(v.im)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(Error::TableFormat("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != TABLE_VERSION {
            return Err(Error::TableFormat(format!("unsupported version {version}")));
        }
        let fingerprint = r.read_u64::<LittleEndian>()?;
        let config_hash = r.read_u64::<LittleEndian>()?;
        let seed = r.read_u64::<LittleEndian>()?;
        let n = r.read_u32::<LittleEndian>()? as usize;
        let m = r.read_u32::<LittleEndian>()? as usize;
        let p = r.read_u32::<LittleEndian>()? as usize;
        let horizon = r.read_f64::<LittleEndian>()?;
        let quad_tol = r.read_f64::<LittleEndian>()?;
        let region = match r.read_u8()? {
            0 => {
                let mut lower = Vec::with_capacity(n);
                let mut upper = Vec::with_capacity(n);
                for _ in 0..n {
                    lower.push(r.read_f64::<LittleEndian>()?);
                    upper.push(r.read_f64::<LittleEndian>()?);
                }
                Region::Box { lower, upper }
            }
            1 => {
                let center = (0..n).map(|_| r.read_f64::<LittleEndian>()).collect::<std::io::Result<_>>()?;
                Region::Ball { center, radius: r.read_f64::<LittleEndian>()? }
            }
            k => return Err(Error::TableFormat(format!("unknown region kind {k}"))),
        };
        let margins = Margins {
            upsilon: r.read_f64::<LittleEndian>()?,
            distinguish: r.read_f64::<LittleEndian>()?,
            cutoff: r.read_f64::<LittleEndian>()?,
        };
        let domain = DomainSpec::new(region, margins)?;
        let mut grid = Grid::new(Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            grid.counts.push(r.read_u32::<LittleEndian>()? as usize);
            grid.lower.push(r.read_f64::<LittleEndian>()?);
            grid.upper.push(r.read_f64::<LittleEndian>()?);
        }
        let eigenvalues = (0..m)
            .map(|_| Ok(Complex64::new(r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?)))
            .collect::<std::io::Result<Vec<_>>>()?;
        let mut labels = Vec::new();
        for _ in 0..2 {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            labels.push(String::from_utf8(buf).map_err(|e| Error::TableFormat(e.to_string()))?);
        }
        let count = grid.num_nodes() * m * p;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(Complex64::new(r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::TableFormat(format!("{} trailing bytes", rest.len())));
        }
        let transform_label = labels.pop().unwrap_or_default();
        let model_label = labels.pop().unwrap_or_default();
        Ok(Self {
            info: TableInfo { fingerprint, model_label, transform_label, eigenvalues, horizon, quad_tol },
            config_hash,
            seed,
            n,
            m,
            p,
            domain,
            grid,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// Loads and checks the fingerprint against the transform it must match.
    pub fn load_for(path: &Path, expected_fingerprint: u64) -> Result<Self> {
        let table = Self::load(path)?;
        table.check_fingerprint(expected_fingerprint)?;
        Ok(table)
    }
}
