//! Uniform tensor grids over a bounding box, grid fields with the Dirichlet
//! data extended over all of Ω^c, central-difference differentials and
//! monotone multilinear interpolation.
//!
//! The Dirichlet condition is a volume condition: jump landings anywhere
//! outside Ω read the data g, whether they fall between grid nodes (handled
//! by interpolation of nodal g values) or beyond the box (handled by direct
//! evaluation of g).

use std::io::Write;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::exprlang::Expr;
use crate::{norm, zero_mat, zero_vec, MatN, VecN, MAX_DIM};

/// Built-in open domains Ω.
#[derive(Debug, Clone)]
pub enum OmegaShape {
    Box { lo: VecN, hi: VecN },
    Ball { center: VecN, radius: f64 },
}

#[derive(Debug, Clone)]
pub struct Domain {
    dim_n: usize,
    box_lo: VecN,
    box_hi: VecN,
    omega: OmegaShape,
    g: Expr,
    bounded: bool,
}

impl Domain {
    pub fn new(
        dim_n: usize,
        box_lo: VecN,
        box_hi: VecN,
        omega: OmegaShape,
        g: Expr,
        bounded: bool,
    ) -> Result<Domain> {
        if dim_n == 0 || dim_n > MAX_DIM {
            return Err(CoreError::DimensionMismatch(format!(
                "domain dimension must be 1 or 2, got {dim_n}"
            )));
        }
        for k in 0..dim_n {
            if !(box_lo[k] < box_hi[k]) {
                return Err(CoreError::InvalidParameter(format!(
                    "box must have positive extent on axis {k}: [{}, {}]",
                    box_lo[k], box_hi[k]
                )));
            }
        }
        if let Some(i) = g.max_coord() {
            if i >= dim_n {
                return Err(CoreError::DimensionMismatch(format!(
                    "Dirichlet data mentions x{i} but the dimension is {dim_n}"
                )));
            }
        }
        let domain = Domain {
            dim_n,
            box_lo,
            box_hi,
            omega,
            g,
            bounded,
        };
        if domain.margin() < 0.0 {
            return Err(CoreError::InvalidParameter(
                "omega must be contained in the bounding box".into(),
            ));
        }
        Ok(domain)
    }

    pub fn dim_n(&self) -> usize {
        self.dim_n
    }

    pub fn box_lo(&self) -> &VecN {
        &self.box_lo
    }

    pub fn box_hi(&self) -> &VecN {
        &self.box_hi
    }

    pub fn omega(&self) -> &OmegaShape {
        &self.omega
    }

    pub fn bounded(&self) -> bool {
        self.bounded
    }

    pub fn g_expr(&self) -> &Expr {
        &self.g
    }

    /// Membership in the open set Ω.
    pub fn in_omega(&self, x: &VecN) -> bool {
        match &self.omega {
            OmegaShape::Box { lo, hi } => (0..self.dim_n).all(|k| x[k] > lo[k] && x[k] < hi[k]),
            OmegaShape::Ball { center, radius } => {
                let mut d = zero_vec();
                for k in 0..self.dim_n {
                    d[k] = x[k] - center[k];
                }
                norm(&d, self.dim_n) < *radius
            }
        }
    }

    pub fn in_box(&self, y: &VecN) -> bool {
        (0..self.dim_n).all(|k| y[k] >= self.box_lo[k] && y[k] <= self.box_hi[k])
    }

    /// Distance from Ω to the box boundary (negative when Ω pokes out).
    pub fn margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        match &self.omega {
            OmegaShape::Box { lo, hi } => {
                for k in 0..self.dim_n {
                    margin = margin.min(lo[k] - self.box_lo[k]);
                    margin = margin.min(self.box_hi[k] - hi[k]);
                }
            }
            OmegaShape::Ball { center, radius } => {
                for k in 0..self.dim_n {
                    margin = margin.min(center[k] - radius - self.box_lo[k]);
                    margin = margin.min(self.box_hi[k] - center[k] - radius);
                }
            }
        }
        margin
    }

    /// Dirichlet data at a point of Ω^c (evaluable anywhere the expression is).
    pub fn g_at(&self, y: &VecN) -> Result<f64> {
        Ok(self.g.eval(y, self.dim_n)?)
    }
}

/// First- and second-order differentials of a grid field at a node: the
/// discrete stand-in for the jet pair (p, X).
#[derive(Debug, Clone, Copy)]
pub struct Differentials {
    pub dim_n: usize,
    /// Gradient.
    pub p: VecN,
    /// Symmetric Hessian.
    pub x_mat: MatN,
}

impl Differentials {
    pub fn zero(dim_n: usize) -> Differentials {
        Differentials {
            dim_n,
            p: zero_vec(),
            x_mat: zero_mat(),
        }
    }
}

/// A tabulated scalar field on a uniform grid over the bounding box, with
/// Dirichlet values from g on every node of Ω^c.
#[derive(Debug, Clone)]
pub struct GridField {
    domain: Arc<Domain>,
    n_cells: [usize; 2],
    spacing: VecN,
    values: Vec<f64>,
    in_omega: Vec<bool>,
}

impl GridField {
    /// A zero-initialized field; call [`GridField::refresh_exterior`] or one
    /// of the fill methods before use.
    pub fn new(domain: Arc<Domain>, n_cells: [usize; 2]) -> Result<GridField> {
        let dim = domain.dim_n();
        if n_cells[0] < 2 || (dim == 2 && n_cells[1] < 2) {
            return Err(CoreError::InvalidParameter(
                "need at least 2 cells per axis".into(),
            ));
        }
        let mut spacing = zero_vec();
        for k in 0..dim {
            spacing[k] = (domain.box_hi()[k] - domain.box_lo()[k]) / n_cells[k] as f64;
        }
        let mut field = GridField {
            domain,
            n_cells,
            spacing,
            values: Vec::new(),
            in_omega: Vec::new(),
        };
        let total = field.node_count_total();
        field.values = vec![0.0; total];
        field.in_omega = (0..total)
            .map(|flat| {
                let point = field.node_point_flat(flat);
                field.domain.in_omega(&point)
            })
            .collect();
        Ok(field)
    }

    /// A field initialized from an expression on the box and g outside Ω.
    pub fn from_expr(domain: Arc<Domain>, n_cells: [usize; 2], expr: &Expr) -> Result<GridField> {
        let mut field = GridField::new(domain, n_cells)?;
        let dim = field.dim_n();
        for flat in 0..field.values.len() {
            let point = field.node_point_flat(flat);
            field.values[flat] = expr.eval(&point, dim)?;
        }
        field.refresh_exterior()?;
        Ok(field)
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn dim_n(&self) -> usize {
        self.domain.dim_n()
    }

    pub fn n_cells(&self) -> [usize; 2] {
        self.n_cells
    }

    pub fn spacing(&self) -> &VecN {
        &self.spacing
    }

    /// Smallest grid spacing across axes.
    pub fn h_min(&self) -> f64 {
        let mut h = self.spacing[0];
        if self.dim_n() == 2 {
            h = h.min(self.spacing[1]);
        }
        h
    }

    pub fn points_per_axis(&self, axis: usize) -> usize {
        if axis < self.dim_n() {
            self.n_cells[axis] + 1
        } else {
            1
        }
    }

    pub fn node_count_total(&self) -> usize {
        self.points_per_axis(0) * self.points_per_axis(1)
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        idx[0] * self.points_per_axis(1) + idx[1]
    }

    pub fn node_point(&self, idx: [usize; 2]) -> VecN {
        let mut point = zero_vec();
        for k in 0..self.dim_n() {
            point[k] = self.domain.box_lo()[k] + idx[k] as f64 * self.spacing[k];
        }
        point
    }

    fn node_point_flat(&self, flat: usize) -> VecN {
        let n1 = self.points_per_axis(1);
        self.node_point([flat / n1, flat % n1])
    }

    pub fn value(&self, idx: [usize; 2]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn set_value(&mut self, idx: [usize; 2], v: f64) {
        let flat = self.flat_index(idx);
        self.values[flat] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node_in_omega(&self, idx: [usize; 2]) -> bool {
        self.in_omega[self.flat_index(idx)]
    }

    pub fn omega_mask(&self) -> &[bool] {
        &self.in_omega
    }

    /// Iterates all node indices in storage order.
    pub fn indices(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        let n1 = self.points_per_axis(1);
        (0..self.node_count_total()).map(move |flat| [flat / n1, flat % n1])
    }

    /// Resets every node of Ω^c to the Dirichlet data.
    pub fn refresh_exterior(&mut self) -> Result<()> {
        for flat in 0..self.values.len() {
            if !self.in_omega[flat] {
                let point = self.node_point_flat(flat);
                self.values[flat] = self.domain.g_at(&point)?;
            }
        }
        Ok(())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Central-difference gradient and Hessian at an interior node; the cross
    /// derivative uses the standard 4-point stencil.
    pub fn gradient_hessian(&self, idx: [usize; 2]) -> Result<Differentials> {
        let dim = self.dim_n();
        for k in 0..dim {
            if idx[k] == 0 || idx[k] >= self.n_cells[k] {
                return Err(CoreError::IndexOnBoxEdge { index: idx });
            }
        }
        let mut p = zero_vec();
        let mut x_mat = zero_mat();
        let center = self.value(idx);
        for k in 0..dim {
            let mut up = idx;
            up[k] += 1;
            let mut dn = idx;
            dn[k] -= 1;
            let vu = self.value(up);
            let vd = self.value(dn);
            let h = self.spacing[k];
            p[k] = (vu - vd) / (2.0 * h);
            x_mat[k][k] = (vu - 2.0 * center + vd) / (h * h);
        }
        if dim == 2 {
            let v = |di: isize, dj: isize| {
                self.value([
                    (idx[0] as isize + di) as usize,
                    (idx[1] as isize + dj) as usize,
                ])
            };
            let cross = (v(1, 1) - v(1, -1) - v(-1, 1) + v(-1, -1))
                / (4.0 * self.spacing[0] * self.spacing[1]);
            x_mat[0][1] = cross;
            x_mat[1][0] = cross;
        }
        Ok(Differentials { dim_n: dim, p, x_mat })
    }

    /// The extended field value anywhere in R^N: multilinear interpolation of
    /// nodal values inside the box, g outside. Interpolation weights are
    /// nonnegative and sum to one.
    pub fn sample_extended(&self, y: &VecN) -> Result<f64> {
        if !self.domain.in_box(y) {
            return self.domain.g_at(y);
        }
        let dim = self.dim_n();
        let mut cell = [0usize; 2];
        let mut t = [0.0f64; 2];
        for k in 0..dim {
            let rel = (y[k] - self.domain.box_lo()[k]) / self.spacing[k];
            let mut c = rel.floor() as isize;
            if c < 0 {
                c = 0;
            }
            let max_cell = self.n_cells[k] as isize - 1;
            if c > max_cell {
                c = max_cell;
            }
            cell[k] = c as usize;
            t[k] = (rel - c as f64).clamp(0.0, 1.0);
        }
        if dim == 1 {
            let v0 = self.value([cell[0], 0]);
            let v1 = self.value([cell[0] + 1, 0]);
            Ok(v0 + t[0] * (v1 - v0))
        } else {
            let v00 = self.value([cell[0], cell[1]]);
            let v01 = self.value([cell[0], cell[1] + 1]);
            let v10 = self.value([cell[0] + 1, cell[1]]);
            let v11 = self.value([cell[0] + 1, cell[1] + 1]);
            let a = v00 + t[1] * (v01 - v00);
            let b = v10 + t[1] * (v11 - v10);
            Ok(a + t[0] * (b - a))
        }
    }

    /// Interpolation footprint of a point inside the box: up to four
    /// (flat index, weight) pairs with nonnegative weights summing to one.
    /// `None` when the point lies outside the box.
    pub fn interp_entries(&self, y: &VecN) -> Option<([(usize, f64); 4], usize)> {
        if !self.domain.in_box(y) {
            return None;
        }
        let dim = self.dim_n();
        let mut cell = [0usize; 2];
        let mut t = [0.0f64; 2];
        for k in 0..dim {
            let rel = (y[k] - self.domain.box_lo()[k]) / self.spacing[k];
            let c = (rel.floor() as isize).clamp(0, self.n_cells[k] as isize - 1) as usize;
            cell[k] = c;
            t[k] = (rel - c as f64).clamp(0.0, 1.0);
        }
        let mut out = [(0usize, 0.0f64); 4];
        if dim == 1 {
            out[0] = (self.flat_index([cell[0], 0]), 1.0 - t[0]);
            out[1] = (self.flat_index([cell[0] + 1, 0]), t[0]);
            Some((out, 2))
        } else {
            out[0] = (
                self.flat_index([cell[0], cell[1]]),
                (1.0 - t[0]) * (1.0 - t[1]),
            );
            out[1] = (self.flat_index([cell[0], cell[1] + 1]), (1.0 - t[0]) * t[1]);
            out[2] = (self.flat_index([cell[0] + 1, cell[1]]), t[0] * (1.0 - t[1]));
            out[3] = (self.flat_index([cell[0] + 1, cell[1] + 1]), t[0] * t[1]);
            Some((out, 4))
        }
    }

    /// Nodewise min and max.
    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Writes the field as CSV rows `x0[,x1],u` in storage order with
    /// 17-significant-digit decimals.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        if self.dim_n() == 1 {
            writeln!(w, "x0,u")?;
        } else {
            writeln!(w, "x0,x1,u")?;
        }
        for idx in self.indices() {
            let point = self.node_point(idx);
            if self.dim_n() == 1 {
                writeln!(w, "{:.16e},{:.16e}", point[0], self.value(idx))?;
            } else {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e}",
                    point[0],
                    point[1],
                    self.value(idx)
                )?;
            }
        }
        Ok(())
    }
}
