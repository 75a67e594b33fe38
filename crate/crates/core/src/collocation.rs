//! Collocation nodes, spectral quadrature matrices and the collocation
//! polynomial (dense output).
//!
//! Nodes live on the unit interval and are scaled by the step size at the use
//! sites. The quadrature matrix `Q` holds `q[m][j] = ∫_0^{τ_m} l_j(s) ds` for
//! the Lagrange basis `l_j` over the nodes.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdcError};
use crate::scalar::Scalar;

/// Gaussian node family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeFamily {
    RadauRight,
    Lobatto,
    Legendre,
}

impl NodeFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeFamily::RadauRight => "radau-right",
            NodeFamily::Lobatto => "lobatto",
            NodeFamily::Legendre => "legendre",
        }
    }
}

impl std::str::FromStr for NodeFamily {
    type Err = SdcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radau-right" | "radau" => Ok(NodeFamily::RadauRight),
            "lobatto" => Ok(NodeFamily::Lobatto),
            "legendre" => Ok(NodeFamily::Legendre),
            other => Err(SdcError::invalid(format!("unknown node family `{other}`"))),
        }
    }
}

/// Strictly increasing collocation nodes in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    family: NodeFamily,
    nodes: Vec<f64>,
}

impl NodeSet {
    pub fn family(&self) -> NodeFamily {
        self.family
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Whether the right end of the step is itself a node.
    pub fn includes_right_end(&self) -> bool {
        self.nodes.last() == Some(&1.0)
    }

    /// Whether the left end of the step is itself a node.
    pub fn includes_left_end(&self) -> bool {
        self.nodes.first() == Some(&0.0)
    }
}

/// Generate `m` nodes of the given family on `[0, 1]`.
///
/// Interior points are the roots of a Jacobi polynomial, taken from the
/// eigenvalues of its symmetric Jacobi matrix and polished by one Newton step
/// on the three-term recurrence.
pub fn generate_nodes(family: NodeFamily, m: usize) -> Result<NodeSet> {
    if m == 0 {
        return Err(SdcError::invalid("node count must be at least 1"));
    }
    let x: Vec<f64> = match family {
        NodeFamily::Legendre => jacobi_roots(m, 0.0, 0.0),
        NodeFamily::RadauRight => {
            let mut x = jacobi_roots(m - 1, 1.0, 0.0);
            x.push(1.0);
            x
        }
        NodeFamily::Lobatto => {
            if m < 2 {
                return Err(SdcError::invalid("Lobatto nodes need M >= 2"));
            }
            let mut x = vec![-1.0];
            x.extend(jacobi_roots(m - 2, 1.0, 1.0));
            x.push(1.0);
            x
        }
    };
    let mut nodes: Vec<f64> = x.iter().map(|&xi| 0.5 * (xi + 1.0)).collect();
    // pin the endpoints exactly; the affine map can leave 1 ulp of noise
    for t in nodes.iter_mut() {
        *t = t.clamp(0.0, 1.0);
    }
    if family == NodeFamily::Lobatto {
        nodes[0] = 0.0;
    }
    if family != NodeFamily::Legendre {
        nodes[m - 1] = 1.0;
    }
    Ok(NodeSet { family, nodes })
}

/// Recurrence coefficients `(a_k, b_k)` of the monic Jacobi polynomials,
/// `p_{k+1} = (x - a_k) p_k - b_k p_{k-1}`, weight `(1-x)^α (1+x)^β`.
fn jacobi_recurrence(k: usize, alpha: f64, beta: f64) -> (f64, f64) {
    let kf = k as f64;
    let ab = alpha + beta;
    let s = 2.0 * kf + ab;
    let a = if k == 0 {
        (beta - alpha) / (ab + 2.0)
    } else {
        (beta * beta - alpha * alpha) / (s * (s + 2.0))
    };
    let b = match k {
        0 => 0.0,
        1 => 4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab)),
        _ => {
            4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab)
                / (s * s * (s + 1.0) * (s - 1.0))
        }
    };
    (a, b)
}

/// Monic Jacobi polynomial of degree `n` and its derivative at `x`.
fn monic_jacobi(n: usize, alpha: f64, beta: f64, x: f64) -> (f64, f64) {
    let (mut p_prev, mut p) = (0.0, 1.0);
    let (mut dp_prev, mut dp) = (0.0, 0.0);
    for k in 0..n {
        let (a, b) = jacobi_recurrence(k, alpha, beta);
        let p_next = (x - a) * p - b * p_prev;
        let dp_next = p + (x - a) * dp - b * dp_prev;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

/// Sorted roots of the degree-`n` Jacobi polynomial on `[-1, 1]`.
fn jacobi_roots(n: usize, alpha: f64, beta: f64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let (a, _) = jacobi_recurrence(k, alpha, beta);
        jm[(k, k)] = a;
        if k + 1 < n {
            let (_, b) = jacobi_recurrence(k + 1, alpha, beta);
            let off = b.sqrt();
            jm[(k, k + 1)] = off;
            jm[(k + 1, k)] = off;
        }
    }
    let mut roots: Vec<f64> = SymmetricEigen::new(jm).eigenvalues.iter().copied().collect();
    for r in roots.iter_mut() {
        let (p, dp) = monic_jacobi(n, alpha, beta, *r);
        if dp != 0.0 {
            *r -= p / dp;
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

/// Gauss–Legendre rule with `n` points on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let x = jacobi_roots(n, 0.0, 0.0);
    let w = x
        .iter()
        .map(|&xi| {
            // P_n' from the monic derivative: P_n = c_n p_n with
            // c_n = (2n)! / (2^n (n!)^2)
            let (_, dp) = monic_jacobi(n, 0.0, 0.0, xi);
            let mut c = 1.0;
            for k in 1..=n {
                c *= (2 * k - 1) as f64 / k as f64;
            }
            let dpn = c * dp;
            2.0 / ((1.0 - xi * xi) * dpn * dpn)
        })
        .collect();
    (x, w)
}

fn lagrange_basis(points: &[f64], j: usize, s: f64) -> f64 {
    let xj = points[j];
    points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != j)
        .map(|(_, &xi)| (s - xi) / (xj - xi))
        .product()
}

/// Nodes together with the spectral quadrature matrix.
#[derive(Debug, Clone)]
pub struct QuadratureTable {
    nodes: NodeSet,
    q: DMatrix<f64>,
    /// `∫_0^1 l_j(s) ds`, used to reach the step end when it is not a node.
    end_weights: Vec<f64>,
}

impl QuadratureTable {
    pub fn new(family: NodeFamily, m: usize) -> Result<Self> {
        Ok(quadrature_matrix(&generate_nodes(family, m)?))
    }

    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn tau(&self) -> &[f64] {
        self.nodes.nodes()
    }

    pub fn m(&self) -> usize {
        self.nodes.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn end_weights(&self) -> &[f64] {
        &self.end_weights
    }
}

/// Build `Q` by integrating every Lagrange basis polynomial with a
/// Gauss–Legendre rule that is exact for its degree.
pub fn quadrature_matrix(nodes: &NodeSet) -> QuadratureTable {
    let m = nodes.len();
    let tau = nodes.nodes();
    let (gx, gw) = gauss_legendre(m / 2 + 1);
    let integrate = |upper: f64, j: usize| -> f64 {
        let half = 0.5 * upper;
        gx.iter()
            .zip(&gw)
            .map(|(&x, &w)| w * half * lagrange_basis(tau, j, half * (x + 1.0)))
            .sum()
    };
    let q = DMatrix::from_fn(m, m, |row, j| integrate(tau[row], j));
    let end_weights = (0..m).map(|j| integrate(1.0, j)).collect();
    QuadratureTable {
        nodes: nodes.clone(),
        q,
        end_weights,
    }
}

/// Barycentric (second form) interpolation over a fixed set of abscissae.
#[derive(Debug, Clone)]
pub struct Barycentric {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Barycentric {
    pub fn new(points: Vec<f64>) -> Self {
        let weights = (0..points.len())
            .map(|j| {
                let prod: f64 = points
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .map(|(_, &xi)| points[j] - xi)
                    .product();
                1.0 / prod
            })
            .collect();
        Barycentric { points, weights }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Values of the Lagrange basis polynomials at `s`.
    pub fn basis(&self, s: f64) -> Vec<f64> {
        if let Some(i) = self.points.iter().position(|&x| x == s) {
            let mut e = vec![0.0; self.points.len()];
            e[i] = 1.0;
            return e;
        }
        let terms: Vec<f64> = self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w / (s - x))
            .collect();
        let denom: f64 = terms.iter().sum();
        terms.into_iter().map(|t| t / denom).collect()
    }

    /// Evaluate the interpolant of `values` (one state per point) at `s`.
    pub fn eval<T: Scalar>(&self, values: &[&[T]], s: f64) -> Vec<T> {
        debug_assert_eq!(values.len(), self.points.len());
        combine(&self.basis(s), values)
    }
}

fn combine<T: Scalar>(coeffs: &[f64], values: &[&[T]]) -> Vec<T> {
    let dim = values.first().map_or(0, |v| v.len());
    let mut out = vec![T::zero(); dim];
    for (&c, v) in coeffs.iter().zip(values) {
        if c != 0.0 {
            crate::scalar::axpy(c, v, &mut out);
        }
    }
    out
}

/// Interpolation abscissae and values of the collocation polynomial: the
/// left end `0` carrying `u0`, followed by the nodes. When the left end is
/// already a node (Lobatto) it is not repeated.
fn polynomial_data<'a, T: Scalar>(
    nodes: &NodeSet,
    u0: &'a [T],
    node_values: &'a [Vec<T>],
) -> (Vec<f64>, Vec<&'a [T]>) {
    let mut points = Vec::with_capacity(nodes.len() + 1);
    let mut values: Vec<&[T]> = Vec::with_capacity(nodes.len() + 1);
    if !nodes.includes_left_end() {
        points.push(0.0);
        values.push(u0);
    }
    points.extend_from_slice(nodes.nodes());
    values.extend(node_values.iter().map(|v| v.as_slice()));
    (points, values)
}

fn check_shapes<T>(nodes: &NodeSet, u0: &[T], node_values: &[Vec<T>]) -> Result<()> {
    if node_values.len() != nodes.len() {
        return Err(SdcError::invalid(format!(
            "expected {} node values, got {}",
            nodes.len(),
            node_values.len()
        )));
    }
    if node_values.iter().any(|v| v.len() != u0.len()) {
        return Err(SdcError::invalid("node values and u0 differ in dimension"));
    }
    Ok(())
}

/// Evaluate the collocation polynomial through `(0, u0)` and `(τ_m, u_m)` at
/// the relative position `s ∈ [0, 1]`.
pub fn dense_eval<T: Scalar>(
    nodes: &NodeSet,
    u0: &[T],
    node_values: &[Vec<T>],
    s: f64,
) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&s) {
        return Err(SdcError::invalid(format!("dense output at s = {s} outside [0, 1]")));
    }
    check_shapes(nodes, u0, node_values)?;
    let (points, values) = polynomial_data(nodes, u0, node_values);
    Ok(Barycentric::new(points).eval(&values, s))
}

/// Re-sample the collocation polynomial of a step of size `dt_old` at the
/// nodes of a shorter step `dt_new` starting at the same time.
pub fn interpolate_to_nodes<T: Scalar>(
    nodes: &NodeSet,
    u0: &[T],
    node_values: &[Vec<T>],
    dt_old: f64,
    dt_new: f64,
) -> Result<Vec<Vec<T>>> {
    if !(dt_new > 0.0 && dt_new <= dt_old) {
        return Err(SdcError::invalid(format!(
            "interpolation needs 0 < dt_new <= dt_old, got {dt_new} > {dt_old}"
        )));
    }
    check_shapes(nodes, u0, node_values)?;
    if dt_new == dt_old {
        return Ok(node_values.to_vec());
    }
    let (points, values) = polynomial_data(nodes, u0, node_values);
    let interp = Barycentric::new(points);
    let ratio = dt_new / dt_old;
    Ok(nodes
        .nodes()
        .iter()
        .map(|&tau| interp.eval(&values, ratio * tau))
        .collect())
}
