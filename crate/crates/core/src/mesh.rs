//! Structured quadrilateral grids on rectangles and boundary-segment tagging.
//!
//! Nodes are numbered lexicographically: `index = j * (nx + 1) + i` where `i`
//! runs along x and `j` along y. Cells list their four corners counterclockwise
//! starting from the lower-left corner.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid domain: require x_min < x_max and y_min < y_max, got ({x_min}, {x_max}) x ({y_min}, {y_max})")]
    InvalidDomain {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    #[error("element counts must be at least 1, got nx = {nx}, ny = {ny}")]
    InvalidCounts { nx: usize, ny: usize },
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Domain2D {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, MeshError> {
        let ok = x_min.is_finite() && x_max.is_finite() && y_min.is_finite() && y_max.is_finite();
        if !ok || x_min >= x_max || y_min >= y_max {
            return Err(MeshError::InvalidDomain {
                x_min,
                x_max,
                y_min,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    /// The recharge reservoir `(0,2) x (0,3)`.
    pub fn reservoir() -> Self {
        Self {
            x_min: 0.0,
            x_max: 2.0,
            y_min: 0.0,
            y_max: 3.0,
        }
    }

    pub fn unit_square() -> Self {
        Self {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMesh {
    pub domain: Domain2D,
    pub nx: usize,
    pub ny: usize,
    pub nodes: Vec<[f64; 2]>,
    pub cells: Vec<[usize; 4]>,
    /// Largest cell diameter.
    pub h: f64,
}

impl GridMesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            self.domain.width() / self.nx as f64,
            self.domain.height() / self.ny as f64,
        )
    }

    /// Boundary edges as node pairs, walked counterclockwise from the
    /// lower-left corner.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let (nx, ny) = (self.nx, self.ny);
        let mut edges = Vec::with_capacity(2 * (nx + ny));
        for i in 0..nx {
            edges.push([self.node_index(i, 0), self.node_index(i + 1, 0)]);
        }
        for j in 0..ny {
            edges.push([self.node_index(nx, j), self.node_index(nx, j + 1)]);
        }
        for i in (0..nx).rev() {
            edges.push([self.node_index(i + 1, ny), self.node_index(i, ny)]);
        }
        for j in (0..ny).rev() {
            edges.push([self.node_index(0, j + 1), self.node_index(0, j)]);
        }
        edges
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let i = node % (self.nx + 1);
        let j = node / (self.nx + 1);
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// Signed area of a cell from its corner coordinates (shoelace formula).
    pub fn cell_area(&self, cell: usize) -> f64 {
        let c = &self.cells[cell];
        let mut twice = 0.0;
        for k in 0..4 {
            let p = self.nodes[c[k]];
            let q = self.nodes[c[(k + 1) % 4]];
            twice += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * twice
    }
}

/// Builds a uniform `nx x ny` grid of rectangular cells.
pub fn build_grid(domain: Domain2D, nx: usize, ny: usize) -> Result<GridMesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::InvalidCounts { nx, ny });
    }
    let domain = Domain2D::new(domain.x_min, domain.x_max, domain.y_min, domain.y_max)?;
    let hx = domain.width() / nx as f64;
    let hy = domain.height() / ny as f64;

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        // pin the last row/column to the exact domain bounds
        let y = if j == ny {
            domain.y_max
        } else {
            domain.y_min + j as f64 * hy
        };
        for i in 0..=nx {
            let x = if i == nx {
                domain.x_max
            } else {
                domain.x_min + i as f64 * hx
            };
            nodes.push([x, y]);
        }
    }

    let stride = nx + 1;
    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let n0 = j * stride + i;
            cells.push([n0, n0 + 1, n0 + 1 + stride, n0 + stride]);
        }
    }

    Ok(GridMesh {
        domain,
        nx,
        ny,
        nodes,
        cells,
        h: hx.hypot(hy),
    })
}

/// Boundary segment classes of the recharge problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// Top inflow segment.
    D1,
    /// Right-hand lower segment (water table contact).
    D2,
    /// No-flow remainder.
    N,
}

impl BoundaryTag {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, BoundaryTag::D1 | BoundaryTag::D2)
    }
}

/// Where the two Dirichlet segments sit on the boundary.
///
/// `D1 = {x in [x_min, x_min + d1_length], y = y_max}` and
/// `D2 = {x = x_max, y in [y_min, y_min + d2_length]}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentLayout {
    pub d1_length: f64,
    pub d2_length: f64,
}

impl Default for SegmentLayout {
    fn default() -> Self {
        Self {
            d1_length: 1.0,
            d2_length: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTags {
    /// `None` for interior nodes.
    pub nodes: Vec<Option<BoundaryTag>>,
    /// Boundary edges (as returned by [`GridMesh::boundary_edges`]) with their tag.
    pub edges: Vec<([usize; 2], BoundaryTag)>,
}

impl BoundaryTags {
    pub fn tag(&self, node: usize) -> Option<BoundaryTag> {
        self.nodes[node]
    }

    pub fn nodes_with(&self, pred: impl Fn(BoundaryTag) -> bool) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(k, t)| t.filter(|&t| pred(t)).map(|_| k))
            .collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.nodes_with(|_| true)
    }

    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        self.nodes_with(BoundaryTag::is_dirichlet)
    }
}

fn point_tag(p: [f64; 2], domain: &Domain2D, layout: &SegmentLayout, tol: f64) -> BoundaryTag {
    let [x, y] = p;
    let on_d2 = (x - domain.x_max).abs() <= tol
        && y >= domain.y_min - tol
        && y <= domain.y_min + layout.d2_length + tol;
    let on_d1 = (y - domain.y_max).abs() <= tol
        && x >= domain.x_min - tol
        && x <= domain.x_min + layout.d1_length + tol;
    if on_d2 {
        BoundaryTag::D2
    } else if on_d1 {
        BoundaryTag::D1
    } else {
        BoundaryTag::N
    }
}

/// Tags boundary nodes and edges with the default recharge layout.
pub fn classify_boundary(mesh: &GridMesh, domain: &Domain2D) -> BoundaryTags {
    classify_boundary_with(mesh, domain, &SegmentLayout::default())
}

/// Tags boundary nodes and edges. A node touching a Dirichlet segment is
/// Dirichlet; D2 takes precedence over D1.
pub fn classify_boundary_with(
    mesh: &GridMesh,
    domain: &Domain2D,
    layout: &SegmentLayout,
) -> BoundaryTags {
    let tol = 1e-9 * mesh.h.max(f64::MIN_POSITIVE);
    let mut nodes = vec![None; mesh.num_nodes()];
    for (k, slot) in nodes.iter_mut().enumerate() {
        if mesh.is_boundary_node(k) {
            *slot = Some(point_tag(mesh.nodes[k], domain, layout, tol));
        }
    }
    let edges = mesh
        .boundary_edges()
        .into_iter()
        .map(|[a, b]| {
            let pa = mesh.nodes[a];
            let pb = mesh.nodes[b];
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            ([a, b], point_tag(mid, domain, layout, tol))
        })
        .collect();
    BoundaryTags { nodes, edges }
}
