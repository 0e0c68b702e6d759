//! Second-order finite-difference stencils on interior nodes.

use super::{Grid2D, ScalarField, VectorField};

/// Centred differences in the interior, second-order one-sided differences
/// on boundary-adjacent nodes (uses interior values only, so constants and
/// affine fields are differentiated exactly).
pub fn gradient(field: &ScalarField) -> VectorField {
    let g = field.grid;
    let mut out = VectorField::zeros(g);
    let v = &field.values;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            out.x.values[k] = axis_derivative(i, g.nx, g.hx, |ii| v[g.idx(ii, j)]);
            out.y.values[k] = axis_derivative(j, g.ny, g.hy, |jj| v[g.idx(i, jj)]);
        }
    }
    out
}

#[inline]
fn axis_derivative(i: usize, n: usize, h: f64, at: impl Fn(usize) -> f64) -> f64 {
    if i == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    } else if i + 1 == n {
        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
    } else {
        (at(i + 1) - at(i - 1)) / (2.0 * h)
    }
}

/// Centred divergence with the flux extended by zero outside the domain.
pub fn divergence(vec: &VectorField) -> ScalarField {
    let g = vec.grid();
    let mut out = ScalarField::zeros(g);
    for j in 0..g.ny as isize {
        for i in 0..g.nx as isize {
            let k = g.idx(i as usize, j as usize);
            out.values[k] = (vec.x.at(i + 1, j) - vec.x.at(i - 1, j)) / (2.0 * g.hx)
                + (vec.y.at(i, j + 1) - vec.y.at(i, j - 1)) / (2.0 * g.hy);
        }
    }
    out
}

/// Five-point Laplacian with homogeneous Dirichlet data.
pub fn laplacian(field: &ScalarField) -> ScalarField {
    let g = field.grid;
    let mut out = ScalarField::zeros(g);
    let (ax, ay) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    for j in 0..g.ny as isize {
        for i in 0..g.nx as isize {
            let c = field.at(i, j);
            out.values[g.idx(i as usize, j as usize)] = ax * (field.at(i + 1, j) - 2.0 * c + field.at(i - 1, j))
                + ay * (field.at(i, j + 1) - 2.0 * c + field.at(i, j - 1));
        }
    }
    out
}

/// Pointwise `|D^2 u|^2 = u_xx^2 + 2 u_xy^2 + u_yy^2` for a Dirichlet field.
pub fn hessian_norm_sq(field: &ScalarField) -> ScalarField {
    let g = field.grid;
    let mut out = ScalarField::zeros(g);
    for j in 0..g.ny as isize {
        for i in 0..g.nx as isize {
            let c = field.at(i, j);
            let uxx = (field.at(i + 1, j) - 2.0 * c + field.at(i - 1, j)) / (g.hx * g.hx);
            let uyy = (field.at(i, j + 1) - 2.0 * c + field.at(i, j - 1)) / (g.hy * g.hy);
            let uxy = (field.at(i + 1, j + 1) - field.at(i + 1, j - 1) - field.at(i - 1, j + 1)
                + field.at(i - 1, j - 1))
                / (4.0 * g.hx * g.hy);
            out.values[g.idx(i as usize, j as usize)] = uxx * uxx + 2.0 * uxy * uxy + uyy * uyy;
        }
    }
    out
}

/// Centred gradient with the Dirichlet zero extension: the exact negative
/// transpose of [`divergence`].
pub(crate) fn gradient_dirichlet(field: &ScalarField) -> VectorField {
    let g: Grid2D = field.grid;
    let mut out = VectorField::zeros(g);
    for j in 0..g.ny as isize {
        for i in 0..g.nx as isize {
            let k = g.idx(i as usize, j as usize);
            out.x.values[k] = (field.at(i + 1, j) - field.at(i - 1, j)) / (2.0 * g.hx);
            out.y.values[k] = (field.at(i, j + 1) - field.at(i, j - 1)) / (2.0 * g.hy);
        }
    }
    out
}
