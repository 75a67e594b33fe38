//! Preconditioners `Q_Δ` approximating the collocation matrix.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::collocation::{NodeFamily, NodeSet, QuadratureTable};
use crate::error::{Result, SdcError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecondKind {
    ImplicitEuler,
    Lu,
    MinSrS,
    ExplicitEuler,
    /// All-zero table: the part is treated by plain Picard iteration.
    Zero,
}

impl PrecondKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PrecondKind::ImplicitEuler => "implicit-euler",
            PrecondKind::Lu => "lu",
            PrecondKind::MinSrS => "min-sr-s",
            PrecondKind::ExplicitEuler => "explicit-euler",
            PrecondKind::Zero => "zero",
        }
    }
}

impl std::str::FromStr for PrecondKind {
    type Err = SdcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implicit-euler" | "ie" => Ok(PrecondKind::ImplicitEuler),
            "lu" => Ok(PrecondKind::Lu),
            "min-sr-s" => Ok(PrecondKind::MinSrS),
            "explicit-euler" | "ee" => Ok(PrecondKind::ExplicitEuler),
            "zero" | "picard" => Ok(PrecondKind::Zero),
            other => Err(SdcError::invalid(format!("unknown preconditioner `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    kind: PrecondKind,
    matrix: DMatrix<f64>,
    /// MIN-SR-S search failed and `diag(Q)` was used instead.
    fallback: bool,
}

impl Preconditioner {
    pub fn build(kind: PrecondKind, quad: &QuadratureTable) -> Result<Self> {
        match kind {
            PrecondKind::ImplicitEuler => Ok(build_qdelta_implicit_euler(quad.nodes())),
            PrecondKind::Lu => build_qdelta_lu(quad),
            PrecondKind::MinSrS => build_qdelta_min_sr_s(quad),
            PrecondKind::ExplicitEuler => Ok(build_qdelta_explicit_euler(quad.nodes())),
            PrecondKind::Zero => Ok(Preconditioner::zero(quad.m())),
        }
    }

    pub fn zero(m: usize) -> Self {
        Preconditioner { kind: PrecondKind::Zero, matrix: DMatrix::zeros(m, m), fallback: false }
    }

    pub fn kind(&self) -> PrecondKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_fallback(&self) -> bool {
        self.fallback
    }

    pub fn is_diagonal(&self) -> bool {
        let m = self.matrix.nrows();
        (0..m).all(|i| (0..m).all(|j| i == j || self.matrix[(i, j)] == 0.0))
    }

    /// Whether row `m` reads any earlier node (strictly lower entries).
    pub fn has_lower_coupling(&self) -> bool {
        let m = self.matrix.nrows();
        (0..m).any(|i| (0..i).any(|j| self.matrix[(i, j)] != 0.0))
    }
}

/// Node-to-node implicit Euler with `τ_0 = 0`: row `m` holds the node gaps
/// `τ_1, τ_2 - τ_1, …, τ_m - τ_{m-1}`.
pub fn build_qdelta_implicit_euler(nodes: &NodeSet) -> Preconditioner {
    let tau = nodes.nodes();
    let m = tau.len();
    let mut q = DMatrix::zeros(m, m);
    for row in 0..m {
        for j in 0..=row {
            q[(row, j)] = tau[j] - if j == 0 { 0.0 } else { tau[j - 1] };
        }
    }
    Preconditioner { kind: PrecondKind::ImplicitEuler, matrix: q, fallback: false }
}

/// Node-to-node forward Euler: entry `(m, j)` for `j < m` is the gap
/// `τ_{j+1} - τ_j`, so node `m` is reached from the nodes before it.
pub fn build_qdelta_explicit_euler(nodes: &NodeSet) -> Preconditioner {
    let tau = nodes.nodes();
    let m = tau.len();
    let mut q = DMatrix::zeros(m, m);
    for row in 0..m {
        for j in 0..row {
            q[(row, j)] = tau[j + 1] - tau[j];
        }
    }
    Preconditioner { kind: PrecondKind::ExplicitEuler, matrix: q, fallback: false }
}

/// `Q_Δ = Uᵀ` from the unpivoted Doolittle factorisation `L U = Qᵀ`.
///
/// A node at the left end gives an all-zero first row and column in `Q`;
/// that node is excluded and the trailing block factorised.
pub fn build_qdelta_lu(quad: &QuadratureTable) -> Result<Preconditioner> {
    let m = quad.m();
    let skip = usize::from(quad.nodes().includes_left_end());
    let a = quad.q().transpose();
    let mut u = DMatrix::<f64>::zeros(m, m);
    let mut l = DMatrix::<f64>::identity(m, m);
    for i in skip..m {
        for j in i..m {
            let s: f64 = (skip..i).map(|p| l[(i, p)] * u[(p, j)]).sum();
            u[(i, j)] = a[(i, j)] - s;
        }
        let pivot = u[(i, i)];
        if pivot.abs() < 1e-14 {
            return Err(SdcError::FactorizationFailure { row: i });
        }
        for r in (i + 1)..m {
            let s: f64 = (skip..i).map(|p| l[(r, p)] * u[(p, i)]).sum();
            l[(r, i)] = (a[(r, i)] - s) / pivot;
        }
    }
    Ok(Preconditioner { kind: PrecondKind::Lu, matrix: u.transpose(), fallback: false })
}

/// Spectral radius through the eigenvalues of a general real matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `I - Q_Δ⁻¹ Q`, the iteration matrix of the stiff limit.
pub fn stiff_limit_matrix(qdelta: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = q.nrows();
    let inv = qdelta.clone().try_inverse()?;
    Some(DMatrix::identity(m, m) - inv * q)
}

/// Diagonal per (family, M), plus whether it is a fallback.
type MinSrSCache = Mutex<HashMap<(NodeFamily, usize), (Vec<f64>, bool)>>;

fn min_sr_s_cache() -> &'static MinSrSCache {
    static CACHE: OnceLock<MinSrSCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Diagonal preconditioner minimising the stiff-limit spectral radius.
///
/// The minimum (zero) is reached when `I - D⁻¹Q` is nilpotent, that is when
/// `D⁻¹Q` has the characteristic polynomial `(λ - 1)^M`. Writing `x = 1/d`
/// this is a polynomial system in the principal minors of `Q`, solved by
/// Newton's method from several starting points. The candidate with the
/// smallest measured radius wins; results are cached per `(family, M)`.
pub fn build_qdelta_min_sr_s(quad: &QuadratureTable) -> Result<Preconditioner> {
    if quad.nodes().includes_left_end() {
        return Err(SdcError::invalid(
            "MIN-SR-S needs node families that exclude the left end",
        ));
    }
    let key = (quad.nodes().family(), quad.m());
    let cached = min_sr_s_cache().lock().unwrap().get(&key).cloned();
    let (diag, fallback) = match cached {
        Some(hit) => hit,
        None => {
            let found = search_min_sr_s(quad);
            min_sr_s_cache().lock().unwrap().insert(key, found.clone());
            found
        }
    };
    if fallback {
        warn!("MIN-SR-S search did not improve on implicit Euler; using diag(Q)");
    }
    Ok(Preconditioner {
        kind: PrecondKind::MinSrS,
        matrix: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)),
        fallback,
    })
}

fn search_min_sr_s(quad: &QuadratureTable) -> (Vec<f64>, bool) {
    let m = quad.m();
    let q = quad.q();
    let tau = quad.tau();
    let reference = stiff_limit_matrix(build_qdelta_implicit_euler(quad.nodes()).matrix(), q)
        .map(|n| spectral_radius(&n))
        .unwrap_or(f64::INFINITY);
    let minors = PrincipalMinors::new(q);

    let mut starts: Vec<Vec<f64>> = vec![
        tau.iter().map(|t| t / m as f64).collect(),
        tau.to_vec(),
        (0..m).map(|i| q[(i, i)]).collect(),
        tau.iter().map(|t| t / 2.0).collect(),
    ];
    // deterministic spread of extra starts
    let mut seed = 0x2545_f491_4f6c_dd1d_u64;
    for _ in 0..24 {
        starts.push(
            tau.iter()
                .map(|t| {
                    seed ^= seed << 13;
                    seed ^= seed >> 7;
                    seed ^= seed << 17;
                    let r = (seed >> 11) as f64 / (1u64 << 53) as f64;
                    t * (0.05 + 1.5 * r)
                })
                .collect(),
        );
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for d0 in starts {
        let Some(d) = minors.newton(d0.iter().map(|d| 1.0 / d).collect()) else {
            continue;
        };
        let d: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
        if d.iter().any(|&di| !(di > 0.0) || !di.is_finite()) {
            continue;
        }
        let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone()));
        let Some(n) = stiff_limit_matrix(&dm, q) else { continue };
        let radius = spectral_radius(&n);
        if best.as_ref().is_none_or(|(r, _)| radius < *r) {
            best = Some((radius, d));
        }
    }
    match best {
        Some((radius, d)) if radius <= reference => (d, false),
        _ => ((0..m).map(|i| q[(i, i)]).collect(), true),
    }
}

/// Principal minors of `Q` grouped by subset, for the nilpotency system
/// `Σ_{|S|=p} det(Q_S) Π_{i∈S} x_i = C(M, p)`, `p = 1..M`.
struct PrincipalMinors {
    m: usize,
    /// `(bitmask, determinant)` for every non-empty subset.
    subsets: Vec<(u32, f64)>,
}

impl PrincipalMinors {
    fn new(q: &DMatrix<f64>) -> Self {
        let m = q.nrows();
        let subsets = (1u32..(1 << m))
            .map(|mask| {
                let idx: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
                let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| q[(idx[r], idx[c])]);
                (mask, sub.determinant())
            })
            .collect();
        PrincipalMinors { m, subsets }
    }

    fn residual_and_jacobian(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let m = self.m;
        let mut res: Vec<f64> = (1..=m).map(|p| -binomial(m, p)).collect();
        let mut jac = DMatrix::zeros(m, m);
        for &(mask, det) in &self.subsets {
            let p = mask.count_ones() as usize;
            let mut prod = det;
            for (i, xi) in x.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    prod *= xi;
                }
            }
            res[p - 1] += prod;
            for k in 0..m {
                if mask & (1 << k) != 0 {
                    let mut partial = det;
                    for (i, xi) in x.iter().enumerate() {
                        if i != k && mask & (1 << i) != 0 {
                            partial *= xi;
                        }
                    }
                    jac[(p - 1, k)] += partial;
                }
            }
        }
        (res, jac)
    }

    fn newton(&self, mut x: Vec<f64>) -> Option<Vec<f64>> {
        for _ in 0..100 {
            let (res, jac) = self.residual_and_jacobian(&x);
            let scale: f64 = (1..=self.m).map(|p| binomial(self.m, p)).fold(0.0, f64::max);
            let norm = res.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
            if !norm.is_finite() {
                return None;
            }
            if norm <= 1e-14 * scale {
                return Some(x);
            }
            let step = jac.lu().solve(&nalgebra::DVector::from_vec(res))?;
            for (xi, s) in x.iter_mut().zip(step.iter()) {
                *xi -= s;
            }
        }
        None
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
