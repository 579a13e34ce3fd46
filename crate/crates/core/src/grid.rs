//! Uniform 2D grid, scalar fields and the column-major flattening that every
//! matrix in the crate is indexed by.
//!
//! Public indices follow the `m = i + (j - 1) * n_x` convention with 1-based
//! `i`, `j`, `m`. Internally fields are stored 0-based in the same order, so
//! `values[(i - 1) + (j - 1) * n_x]` is `v(x_i, y_j)`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Uniform tensor grid over `[x_min, x_max] x [y_min, y_max]`, both endpoints
/// included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl Grid2D {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 points per direction, got {nx}x{ny}"
            )));
        }
        let (x_min, x_max) = x_range;
        let (y_min, y_max) = y_range;
        if !(x_max > x_min && y_max > y_min) || ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "bad bounds [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
            dx: (x_max - x_min) / (nx - 1) as f64,
            dy: (y_max - y_min) / (ny - 1) as f64,
        })
    }

    /// Grid on the unit square.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        Self::new((0.0, 1.0), (0.0, 1.0), nx, ny)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `x` coordinate of the 0-based column index `i`.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        // Division last so that e.g. 40/100 lands on the nearest double to 0.4.
        self.x_min + (self.x_max - self.x_min) * i as f64 / (self.nx - 1) as f64
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y_min + (self.y_max - self.y_min) * j as f64 / (self.ny - 1) as f64
    }

    /// 0-based storage offset of 0-based `(i, j)`.
    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        i + j * self.nx
    }

    /// 0-based `(i, j)` of a 0-based storage offset.
    #[inline]
    pub fn coords(&self, offset: usize) -> (usize, usize) {
        (offset % self.nx, offset / self.nx)
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub fn check_same(&self, other: &Grid2D) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )))
        }
    }
}

/// Linear index `m` in `1..=n_x * n_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlatIndex(usize);

impl FlatIndex {
    pub fn new(m: usize, grid: &Grid2D) -> Result<Self> {
        if m == 0 || m > grid.len() {
            return Err(Error::FlatIndexOutOfRange { m, len: grid.len() });
        }
        Ok(Self(m))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    /// 0-based storage offset.
    #[inline]
    pub fn offset(self) -> usize {
        self.0 - 1
    }
}

/// `m = i + (j - 1) * n_x` for 1-based `i`, `j`.
pub fn flatten(i: usize, j: usize, grid: &Grid2D) -> Result<FlatIndex> {
    if i == 0 || j == 0 || i > grid.nx || j > grid.ny {
        return Err(Error::IndexOutOfRange { i, j, nx: grid.nx, ny: grid.ny });
    }
    Ok(FlatIndex(i + (j - 1) * grid.nx))
}

/// Inverse of [`flatten`], returning 1-based `(i, j)`.
pub fn unflatten(m: FlatIndex, grid: &Grid2D) -> (usize, usize) {
    let (i, j) = grid.coords(m.offset());
    (i + 1, j + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    X,
    Y,
}

/// Scalar field sampled at the grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    grid: Grid2D,
    values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { values: vec![0.0; grid.len()], grid }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self { values: vec![c; grid.len()], grid }
    }

    /// Field from values already in flatten order.
    pub fn from_flat(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at offset {k}")));
        }
        Ok(Self { grid, values })
    }

    /// Field from `rows[i][j] = v(x_i, y_j)` (0-based).
    pub fn from_rows(grid: Grid2D, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != grid.nx || rows.iter().any(|r| r.len() != grid.ny) {
            return Err(Error::GridMismatch("row layout does not match grid".into()));
        }
        let mut values = vec![0.0; grid.len()];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                values[grid.offset(i, j)] = v;
            }
        }
        Self::from_flat(grid, values)
    }

    /// Pointwise evaluation of `f(x, y)` at every grid point.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                values.push(f(grid.x(i), y));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// Values in flatten order.
    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// 0-based access.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.offset(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.offset(i, j);
        self.values[k] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2D {
        Field2D { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `self + a * other`, in place.
    pub fn axpy(&mut self, a: f64, other: &Field2D) {
        debug_assert!(self.grid.same_shape(&other.grid));
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    /// Little-endian binary: `n_x`, `n_y` as u64, then the values as f64 in
    /// flatten order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.grid.nx as u64).to_le_bytes())?;
        w.write_all(&(self.grid.ny as u64).to_le_bytes())?;
        self.write_values(&mut w)
    }

    pub(crate) fn write_values<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    /// Reads the binary format, placing the samples on `x_range x y_range`.
    pub fn read_binary<R: Read>(mut r: R, x_range: (f64, f64), y_range: (f64, f64)) -> Result<Self> {
        let nx = read_u64(&mut r, "field header")? as usize;
        let ny = read_u64(&mut r, "field header")? as usize;
        let grid = Grid2D::new(x_range, y_range, nx, ny)?;
        let values = read_f64s(&mut r, grid.len(), "field data")?;
        Self::from_flat(grid, values)
    }

    /// Debug CSV: `n_y` lines, line `j` holding `v(x_1, y_j), ..., v(x_nx, y_j)`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.grid.nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Format { what, detail: e.to_string() })?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    r.read_exact(&mut bytes).map_err(|e| Error::Format { what, detail: e.to_string() })?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Flattened copy of `f` (column-major stacking).
pub fn flatten_field(f: &Field2D) -> Vec<f64> {
    f.values.clone()
}

pub fn unflatten_field(v: Vec<f64>, grid: Grid2D) -> Result<Field2D> {
    Field2D::from_flat(grid, v)
}

/// Second-order central difference with periodic wrap on the index range:
/// `(f[i+1] - f[i-1]) / (2 dx)`, indices mod `n_x` (resp. `n_y`).
pub fn central_diff(f: &Field2D, dir: Direction) -> Field2D {
    let g = f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let mut out = vec![0.0; g.len()];
    match dir {
        Direction::X => {
            let inv = 1.0 / (2.0 * g.dx);
            for j in 0..ny {
                let row = &f.values[j * nx..(j + 1) * nx];
                let dst = &mut out[j * nx..(j + 1) * nx];
                for i in 0..nx {
                    let ip = if i + 1 == nx { 0 } else { i + 1 };
                    let im = if i == 0 { nx - 1 } else { i - 1 };
                    dst[i] = (row[ip] - row[im]) * inv;
                }
            }
        }
        Direction::Y => {
            let inv = 1.0 / (2.0 * g.dy);
            for j in 0..ny {
                let jp = if j + 1 == ny { 0 } else { j + 1 };
                let jm = if j == 0 { ny - 1 } else { j - 1 };
                for i in 0..nx {
                    out[i + j * nx] = (f.values[i + jp * nx] - f.values[i + jm * nx]) * inv;
                }
            }
        }
    }
    Field2D { grid: g, values: out }
}
