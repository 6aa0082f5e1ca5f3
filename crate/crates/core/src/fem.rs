//! Finite-element spaces on [`GridMesh`] and the matrices/vectors of the weak
//! forms: weighted mass and stiffness, gravity load, water flux and the
//! flux-form convection operator.
//!
//! Coefficients enter as [`Coefficient`]s: constant, nodal or one value per quadrature
//! point. Nonlinear closures are evaluated pointwise from interpolated nodal
//! fields, not interpolated from nodal closure values.

use std::sync::Arc;

use thiserror::Error;

use crate::constitutive::{self, ConstitutiveSet};
use crate::linalg::{CsrMatrix, SparsityPattern};
use crate::mesh::{BoundaryTags, GridMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("negative diffusion coefficient {value} at element {element}, quadrature point {point}")]
    NegativeCoefficient { element: usize, point: usize, value: f64 },
    #[error("no Dirichlet value supplied for constrained node {0}")]
    MissingDirichlet(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    /// Bilinear quadrilaterals, 2x2 Gauss.
    Q1,
    /// Each cell split along its lower-left/upper-right diagonal into two
    /// linear triangles, 3-point rule.
    P1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Psi,
    Theta,
    Conc,
    Auxiliary,
}

/// Nodal coefficient vector of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct DofField {
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

impl DofField {
    pub fn new(kind: FieldKind, values: Vec<f64>) -> Self {
        Self { kind, values }
    }

    pub fn constant(kind: FieldKind, n: usize, value: f64) -> Self {
        Self::new(kind, vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Reference-element quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Tensor Gauss-Legendre on `[-1, 1]^2` with `n` points per direction.
    pub fn gauss_square(n: usize) -> Self {
        let (x, w): (Vec<f64>, Vec<f64>) = match n {
            1 => (vec![0.0], vec![2.0]),
            2 => {
                let a = 1.0 / 3f64.sqrt();
                (vec![-a, a], vec![1.0, 1.0])
            }
            3 => {
                let a = (0.6f64).sqrt();
                (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
            }
            _ => panic!("gauss_square supports 1..=3 points"),
        };
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for j in 0..n {
            for i in 0..n {
                points.push([x[i], x[j]]);
                weights.push(w[i] * w[j]);
            }
        }
        Self { points, weights }
    }

    /// Edge-midpoint rule on the reference triangle `{(r,s): r,s >= 0, r+s <= 1}`.
    pub fn triangle_midpoints() -> Self {
        Self {
            points: vec![[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]],
            weights: vec![1.0 / 6.0; 3],
        }
    }
}

fn q1_shape(p: [f64; 2]) -> ([f64; 4], [[f64; 2]; 4]) {
    let [r, s] = p;
    let n = [
        0.25 * (1.0 - r) * (1.0 - s),
        0.25 * (1.0 + r) * (1.0 - s),
        0.25 * (1.0 + r) * (1.0 + s),
        0.25 * (1.0 - r) * (1.0 + s),
    ];
    let d = [
        [-0.25 * (1.0 - s), -0.25 * (1.0 - r)],
        [0.25 * (1.0 - s), -0.25 * (1.0 + r)],
        [0.25 * (1.0 + s), 0.25 * (1.0 + r)],
        [-0.25 * (1.0 + s), 0.25 * (1.0 - r)],
    ];
    (n, d)
}

/// Precomputed element geometry: for every element and quadrature point the
/// integration weight `w |J|`, the shape values and the physical gradients.
#[derive(Debug)]
pub struct FeSpace {
    pub mesh: Arc<GridMesh>,
    pub kind: ElementKind,
    /// Element connectivity (4 or 3 nodes).
    pub elements: Vec<Vec<usize>>,
    pub nodes_per_element: usize,
    pub qp_per_element: usize,
    jxw: Vec<f64>,
    shape: Vec<f64>,
    grad: Vec<[f64; 2]>,
    qp_coords: Vec<[f64; 2]>,
    /// Node adjacency pattern.
    pub pattern: Arc<SparsityPattern>,
    /// For element `e`, local pair `(a, b)`: value index in `pattern`.
    local_to_global: Vec<usize>,
}

impl FeSpace {
    pub fn new(mesh: Arc<GridMesh>, kind: ElementKind) -> Self {
        let (elements, rule): (Vec<Vec<usize>>, QuadratureRule) = match kind {
            ElementKind::Q1 => (
                mesh.cells.iter().map(|c| c.to_vec()).collect(),
                QuadratureRule::gauss_square(2),
            ),
            ElementKind::P1 => {
                let mut tris = Vec::with_capacity(2 * mesh.num_cells());
                for c in &mesh.cells {
                    tris.push(vec![c[0], c[1], c[2]]);
                    tris.push(vec![c[0], c[2], c[3]]);
                }
                (tris, QuadratureRule::triangle_midpoints())
            }
        };
        let npe = elements[0].len();
        let nqp = rule.points.len();
        let ne = elements.len();
        let mut jxw = Vec::with_capacity(ne * nqp);
        let mut shape = Vec::with_capacity(ne * nqp * npe);
        let mut grad = Vec::with_capacity(ne * nqp * npe);
        let mut qp_coords = Vec::with_capacity(ne * nqp);

        for el in &elements {
            let xs: Vec<[f64; 2]> = el.iter().map(|&n| mesh.nodes[n]).collect();
            for (q, &p) in rule.points.iter().enumerate() {
                let (n, dref): (Vec<f64>, Vec<[f64; 2]>) = match kind {
                    ElementKind::Q1 => {
                        let (n, d) = q1_shape(p);
                        (n.to_vec(), d.to_vec())
                    }
                    ElementKind::P1 => {
                        let [r, s] = p;
                        (vec![1.0 - r - s, r, s], vec![[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
                    }
                };
                // J[i][k] = d x_i / d xi_k
                let mut jac = [[0.0; 2]; 2];
                let mut xq = [0.0; 2];
                for a in 0..npe {
                    for i in 0..2 {
                        xq[i] += n[a] * xs[a][i];
                        for k in 0..2 {
                            jac[i][k] += xs[a][i] * dref[a][k];
                        }
                    }
                }
                let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                assert!(det > 0.0, "degenerate or inverted element");
                let inv = [
                    [jac[1][1] / det, -jac[0][1] / det],
                    [-jac[1][0] / det, jac[0][0] / det],
                ];
                jxw.push(rule.weights[q] * det);
                qp_coords.push(xq);
                for a in 0..npe {
                    shape.push(n[a]);
                    // grad_x N = J^{-T} grad_xi N
                    grad.push([
                        inv[0][0] * dref[a][0] + inv[1][0] * dref[a][1],
                        inv[0][1] * dref[a][0] + inv[1][1] * dref[a][1],
                    ]);
                }
            }
        }

        let nn = mesh.num_nodes();
        let mut rows = vec![Vec::new(); nn];
        for el in &elements {
            for &a in el {
                rows[a].extend_from_slice(el);
            }
        }
        let pattern = Arc::new(SparsityPattern::from_rows(nn, rows));
        let mut local_to_global = Vec::with_capacity(ne * npe * npe);
        for el in &elements {
            for &a in el {
                for &b in el {
                    local_to_global.push(pattern.find(a, b).unwrap());
                }
            }
        }

        Self {
            mesh,
            kind,
            elements,
            nodes_per_element: npe,
            qp_per_element: nqp,
            jxw,
            shape,
            grad,
            qp_coords,
            pattern,
            local_to_global,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_qp(&self) -> usize {
        self.elements.len() * self.qp_per_element
    }

    /// Integration weight `w_q |J|` at global quadrature index.
    #[inline]
    pub fn jxw(&self, qp: usize) -> f64 {
        self.jxw[qp]
    }

    #[inline]
    pub fn shape(&self, qp: usize) -> &[f64] {
        let npe = self.nodes_per_element;
        &self.shape[qp * npe..(qp + 1) * npe]
    }

    #[inline]
    pub fn grad(&self, qp: usize) -> &[[f64; 2]] {
        let npe = self.nodes_per_element;
        &self.grad[qp * npe..(qp + 1) * npe]
    }

    pub fn qp_coords(&self) -> &[[f64; 2]] {
        &self.qp_coords
    }

    fn check_len(&self, got: usize) -> Result<(), AssemblyError> {
        if got != self.num_nodes() {
            return Err(AssemblyError::Dimension {
                expected: self.num_nodes(),
                got,
            });
        }
        Ok(())
    }

    fn check_qp(&self, got: usize) -> Result<(), AssemblyError> {
        if got != self.num_qp() {
            return Err(AssemblyError::Dimension {
                expected: self.num_qp(),
                got,
            });
        }
        Ok(())
    }

    /// Values of a nodal field at all quadrature points.
    pub fn interpolate(&self, nodal: &[f64]) -> Vec<f64> {
        let nqp = self.qp_per_element;
        let mut out = Vec::with_capacity(self.num_qp());
        for (e, el) in self.elements.iter().enumerate() {
            for q in 0..nqp {
                let g = e * nqp + q;
                out.push(el.iter().zip(self.shape(g)).map(|(&n, s)| nodal[n] * s).sum());
            }
        }
        out
    }

    /// Gradients of a nodal field at all quadrature points.
    pub fn gradient(&self, nodal: &[f64]) -> Vec<[f64; 2]> {
        let nqp = self.qp_per_element;
        let mut out = Vec::with_capacity(self.num_qp());
        for (e, el) in self.elements.iter().enumerate() {
            for q in 0..nqp {
                let g = e * nqp + q;
                let mut d = [0.0; 2];
                for (&n, gr) in el.iter().zip(self.grad(g)) {
                    d[0] += nodal[n] * gr[0];
                    d[1] += nodal[n] * gr[1];
                }
                out.push(d);
            }
        }
        out
    }

    /// Nodal interpolant of a function.
    pub fn interpolant(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.mesh.nodes.iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Generic element loop: `local(e, qp, a, b) -> contribution` summed over
    /// quadrature points into the node-pattern matrix.
    fn assemble_matrix(&self, mut local: impl FnMut(usize, usize, usize) -> f64) -> CsrMatrix {
        let mut m = CsrMatrix::zeros(self.pattern.clone());
        let npe = self.nodes_per_element;
        let nqp = self.qp_per_element;
        let mut ke = vec![0.0; npe * npe];
        for e in 0..self.num_elements() {
            ke.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..nqp {
                let g = e * nqp + q;
                for a in 0..npe {
                    for b in 0..npe {
                        ke[a * npe + b] += local(g, a, b);
                    }
                }
            }
            let map = &self.local_to_global[e * npe * npe..(e + 1) * npe * npe];
            for (k, &pos) in map.iter().enumerate() {
                m.values[pos] += ke[k];
            }
        }
        m
    }

    fn assemble_vector(&self, mut local: impl FnMut(usize, usize) -> f64) -> Vec<f64> {
        let mut v = vec![0.0; self.num_nodes()];
        let nqp = self.qp_per_element;
        for (e, el) in self.elements.iter().enumerate() {
            for q in 0..nqp {
                let g = e * nqp + q;
                for (a, &n) in el.iter().enumerate() {
                    v[n] += local(g, a);
                }
            }
        }
        v
    }

    /// `M[i][j] = int w phi_i phi_j`.
    pub fn assemble_weighted_mass(&self, weight: &Coefficient) -> Result<CsrMatrix, AssemblyError> {
        let w = self.coefficient_at_qp(weight)?;
        Ok(self.assemble_matrix(|g, a, b| {
            let s = self.shape(g);
            w.at(g) * s[a] * s[b] * self.jxw[g]
        }))
    }

    /// Row-sum lumped version of the weighted mass matrix (diagonal stored on
    /// the full node pattern).
    pub fn assemble_lumped_mass(&self, weight: &Coefficient) -> Result<CsrMatrix, AssemblyError> {
        let full = self.assemble_weighted_mass(weight)?;
        let sums = full.row_sums();
        let mut m = CsrMatrix::zeros(self.pattern.clone());
        for (i, s) in sums.into_iter().enumerate() {
            let k = self.pattern.find(i, i).unwrap();
            m.values[k] = s;
        }
        Ok(m)
    }

    /// `A[i][j] = int k grad phi_j . grad phi_i`; negative coefficients are an error.
    pub fn assemble_weighted_stiffness(&self, coeff: &Coefficient) -> Result<CsrMatrix, AssemblyError> {
        let k = self.coefficient_at_qp(coeff)?;
        let nqp = self.qp_per_element;
        for g in 0..self.num_qp() {
            let v = k.at(g);
            if v < 0.0 || v.is_nan() {
                return Err(AssemblyError::NegativeCoefficient {
                    element: g / nqp,
                    point: g % nqp,
                    value: v,
                });
            }
        }
        Ok(self.assemble_matrix(|g, a, b| {
            let gr = self.grad(g);
            k.at(g) * (gr[a][0] * gr[b][0] + gr[a][1] * gr[b][1]) * self.jxw[g]
        }))
    }

    /// `A[i][j] = int (T grad phi_j) . grad phi_i` for a constant tensor `T`.
    pub fn assemble_tensor_stiffness(&self, t: [[f64; 2]; 2]) -> CsrMatrix {
        self.assemble_matrix(|g, a, b| {
            let gr = self.grad(g);
            let tb = [
                t[0][0] * gr[b][0] + t[0][1] * gr[b][1],
                t[1][0] * gr[b][0] + t[1][1] * gr[b][1],
            ];
            (tb[0] * gr[a][0] + tb[1] * gr[a][1]) * self.jxw[g]
        })
    }

    /// `b[i] = int k e_z . grad phi_i` with `e_z = (0, 1)`.
    pub fn assemble_gravity_load(&self, k: &Coefficient) -> Result<Vec<f64>, AssemblyError> {
        let k = self.coefficient_at_qp(k)?;
        Ok(self.assemble_vector(|g, a| k.at(g) * self.grad(g)[a][1] * self.jxw[g]))
    }

    /// `b[i] = int v . grad phi_i` for a vector field at quadrature points.
    pub fn assemble_gradient_load(&self, v: &[[f64; 2]]) -> Result<Vec<f64>, AssemblyError> {
        self.check_qp(v.len())?;
        Ok(self.assemble_vector(|g, a| {
            let gr = self.grad(g)[a];
            (v[g][0] * gr[0] + v[g][1] * gr[1]) * self.jxw[g]
        }))
    }

    /// `b[i] = int f phi_i`.
    pub fn assemble_load(&self, f: &Coefficient) -> Result<Vec<f64>, AssemblyError> {
        let f = self.coefficient_at_qp(f)?;
        Ok(self.assemble_vector(|g, a| f.at(g) * self.shape(g)[a] * self.jxw[g]))
    }

    /// `C[i][j] = int (u phi_j) . grad phi_i` for a vector field given at
    /// quadrature points.
    pub fn assemble_convection(&self, u: &[[f64; 2]]) -> Result<CsrMatrix, AssemblyError> {
        self.check_qp(u.len())?;
        Ok(self.assemble_matrix(|g, a, b| {
            let gr = self.grad(g)[a];
            (u[g][0] * gr[0] + u[g][1] * gr[1]) * self.shape(g)[b] * self.jxw[g]
        }))
    }

    /// Per-quadrature-point water flux `u = -K(theta, psi) (grad psi + e_z)`.
    /// Water content is clamped before evaluating the conductivity; the count
    /// of clamped points is returned alongside.
    pub fn compute_water_flux(
        &self,
        psi: &[f64],
        theta: &[f64],
        set: &ConstitutiveSet,
    ) -> Result<(Vec<[f64; 2]>, usize), AssemblyError> {
        self.check_len(psi.len())?;
        self.check_len(theta.len())?;
        let psi_q = self.interpolate(psi);
        let theta_q = self.interpolate(theta);
        let grad_q = self.gradient(psi);
        let mut clamped = 0;
        let flux = (0..self.num_qp())
            .map(|g| {
                let (t, hit) = set.clamp_theta(theta_q[g]);
                clamped += hit as usize;
                let k = constitutive::conductivity_unchecked(t, psi_q[g], &set.vg);
                [-k * grad_q[g][0], -k * (grad_q[g][1] + 1.0)]
            })
            .collect();
        Ok((flux, clamped))
    }

    /// Resolves a coefficient to per-quadrature-point values.
    pub fn coefficient_at_qp<'a>(&self, c: &'a Coefficient) -> Result<QpValues<'a>, AssemblyError> {
        match c {
            Coefficient::Constant(v) => Ok(QpValues::Constant(*v)),
            Coefficient::Nodal(v) => {
                self.check_len(v.len())?;
                Ok(QpValues::Owned(self.interpolate(v)))
            }
            Coefficient::Qp(v) => {
                self.check_qp(v.len())?;
                Ok(QpValues::Borrowed(v))
            }
        }
    }

    /// `int f dx` for a per-quadrature-point field.
    pub fn integrate(&self, f: &Coefficient) -> Result<f64, AssemblyError> {
        let f = self.coefficient_at_qp(f)?;
        Ok((0..self.num_qp()).map(|g| f.at(g) * self.jxw[g]).sum())
    }
}

/// A coefficient of a bilinear or linear form.
#[derive(Debug, Clone)]
pub enum Coefficient {
    Constant(f64),
    /// Nodal values, interpolated with the element basis.
    Nodal(Vec<f64>),
    /// Values at quadrature points.
    Qp(Vec<f64>),
}

pub enum QpValues<'a> {
    Constant(f64),
    Owned(Vec<f64>),
    Borrowed(&'a [f64]),
}

impl QpValues<'_> {
    #[inline]
    pub fn at(&self, g: usize) -> f64 {
        match self {
            QpValues::Constant(v) => *v,
            QpValues::Owned(v) => v[g],
            QpValues::Borrowed(v) => v[g],
        }
    }
}

/// Prescribed values of one field on its constrained nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletValues {
    pub values: Vec<Option<f64>>,
}

impl DirichletValues {
    pub fn none(n: usize) -> Self {
        Self { values: vec![None; n] }
    }

    pub fn constrained(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().enumerate().filter_map(|(k, v)| v.map(|v| (k, v)))
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Overwrites constrained entries of `field`.
    pub fn impose(&self, field: &mut [f64]) {
        for (k, v) in self.constrained() {
            field[k] = v;
        }
    }
}

/// Row replacement for the nodes selected by `constrained`: row becomes the
/// identity and the right-hand side the prescribed value. `offset` shifts
/// node indices into a block of a larger system.
pub fn apply_dirichlet(
    matrix: &mut CsrMatrix,
    rhs: &mut [f64],
    tags: &BoundaryTags,
    constrained: impl Fn(crate::mesh::BoundaryTag) -> bool,
    values: &DirichletValues,
    offset: usize,
) -> Result<(), AssemblyError> {
    let mut rows = Vec::new();
    for (node, tag) in tags.nodes.iter().enumerate() {
        if let Some(t) = tag {
            if constrained(*t) {
                let v = values.values[node].ok_or(AssemblyError::MissingDirichlet(node))?;
                rows.push((offset + node, v));
            }
        }
    }
    crate::linalg::apply_row_constraints(matrix, rhs, &rows);
    Ok(())
}
