//! Bilinear quadrilateral elements on a structured grid over the unit square.

/// Gauss–Legendre points and weights on [-1, 1].
pub(crate) fn gauss_rule(order: usize) -> (&'static [f64], &'static [f64]) {
    const P2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
    const W2: [f64; 2] = [1.0, 1.0];
    const P3: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const W3: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    match order {
        2 => (&P2, &W2),
        3 => (&P3, &W3),
        _ => panic!("unsupported Gauss order {order}"),
    }
}

/// Structured `nx × ny` grid of square-ish cells on `[0,1]^2`.
///
/// Nodes are numbered row by row: node `(i, j)` has index `j * (nx + 1) + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadGrid {
    pub nx: usize,
    pub ny: usize,
}

/// One quadrature point of an element with everything the kernels need.
#[derive(Debug, Clone, Copy)]
pub(crate) struct QuadPoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
    pub shape: [f64; 4],
    pub grad: [[f64; 2]; 4],
}

impl QuadGrid {
    pub fn new(nx: usize, ny: usize) -> Self {
        assert!(nx > 0 && ny > 0);
        Self { nx, ny }
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_coords(&self, n: usize) -> (f64, f64) {
        let i = n % (self.nx + 1);
        let j = n / (self.nx + 1);
        (i as f64 * self.hx(), j as f64 * self.hy())
    }

    pub fn elements(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ny).flat_map(move |ey| (0..self.nx).map(move |ex| (ex, ey)))
    }

    /// Counter-clockwise element nodes starting at the lower-left corner.
    pub fn element_nodes(&self, ex: usize, ey: usize) -> [usize; 4] {
        [
            self.node(ex, ey),
            self.node(ex + 1, ey),
            self.node(ex + 1, ey + 1),
            self.node(ex, ey + 1),
        ]
    }

    pub fn element_center(&self, ex: usize, ey: usize) -> (f64, f64) {
        ((ex as f64 + 0.5) * self.hx(), (ey as f64 + 0.5) * self.hy())
    }

    pub(crate) fn quadrature(&self, ex: usize, ey: usize, order: usize) -> Vec<QuadPoint> {
        let (pts, wts) = gauss_rule(order);
        let (hx, hy) = (self.hx(), self.hy());
        let (x0, y0) = (ex as f64 * hx, ey as f64 * hy);
        let mut out = Vec::with_capacity(pts.len() * pts.len());
        for (b, &eta) in pts.iter().enumerate() {
            for (a, &xi) in pts.iter().enumerate() {
                let (shape, dref) = reference_shape(xi, eta);
                let mut grad = [[0.0; 2]; 4];
                for k in 0..4 {
                    grad[k] = [dref[k][0] * 2.0 / hx, dref[k][1] * 2.0 / hy];
                }
                out.push(QuadPoint {
                    x: x0 + 0.5 * (xi + 1.0) * hx,
                    y: y0 + 0.5 * (eta + 1.0) * hy,
                    weight: wts[a] * wts[b] * 0.25 * hx * hy,
                    shape,
                    grad,
                });
            }
        }
        out
    }

    /// Element containing `(x, y)` and the bilinear weights of its nodes.
    pub fn locate(&self, x: f64, y: f64) -> ([usize; 4], [f64; 4]) {
        let ex = ((x / self.hx()).floor() as usize).min(self.nx - 1);
        let ey = ((y / self.hy()).floor() as usize).min(self.ny - 1);
        let xi = 2.0 * (x / self.hx() - ex as f64) - 1.0;
        let eta = 2.0 * (y / self.hy() - ey as f64) - 1.0;
        let (shape, _) = reference_shape(xi, eta);
        (self.element_nodes(ex, ey), shape)
    }

    /// Uniform `k × k` interior grid of observation points.
    pub fn interior_points(k: usize) -> Vec<(f64, f64)> {
        let step = 1.0 / (k as f64 + 1.0);
        (1..=k)
            .flat_map(|j| (1..=k).map(move |i| (i as f64 * step, j as f64 * step)))
            .collect()
    }
}

fn reference_shape(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    const SIGNS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut n = [0.0; 4];
    let mut d = [[0.0; 2]; 4];
    for (k, &(sx, sy)) in SIGNS.iter().enumerate() {
        n[k] = 0.25 * (1.0 + sx * xi) * (1.0 + sy * eta);
        d[k] = [0.25 * sx * (1.0 + sy * eta), 0.25 * sy * (1.0 + sx * xi)];
    }
    (n, d)
}

/// Maps grid dofs to unknown indices, skipping constrained dofs.
#[derive(Debug, Clone)]
pub(crate) struct DofMap {
    pub free: Vec<Option<usize>>,
    pub count: usize,
}

impl DofMap {
    pub fn new(total: usize, constrained: impl Fn(usize) -> bool) -> Self {
        let mut free = vec![None; total];
        let mut count = 0;
        for (d, slot) in free.iter_mut().enumerate() {
            if !constrained(d) {
                *slot = Some(count);
                count += 1;
            }
        }
        Self { free, count }
    }
}
