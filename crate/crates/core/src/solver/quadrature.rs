//! Symmetric triangle rules and Gauss-Legendre nodes.

use std::f64::consts::PI;

use crate::error::SolverError;
use crate::geometry::Vec3;

/// Quadrature rule on a triangle in barycentric coordinates. Weights sum to 1,
/// so an integral is `area · Σ w f(x_q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    pub order: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// Fully symmetric (Dunavant) rule exact for polynomials of total degree
    /// `order`. Supported orders: 1, 2, 4, 6, 8.
    pub fn new(order: usize) -> Result<Self, SolverError> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let centroid = |w: f64, points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>| {
            points.push([1.0 / 3.0; 3]);
            weights.push(w);
        };
        // orbit of (a, a, 1-2a)
        let s21 = |a: f64, w: f64, points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>| {
            let b = 1.0 - 2.0 * a;
            for p in [[b, a, a], [a, b, a], [a, a, b]] {
                points.push(p);
                weights.push(w);
            }
        };
        // orbit of (a, b, 1-a-b)
        let s111 = |a: f64, b: f64, w: f64, points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>| {
            let c = 1.0 - a - b;
            for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                points.push(p);
                weights.push(w);
            }
        };
        match order {
            1 => centroid(1.0, &mut points, &mut weights),
            2 => s21(1.0 / 6.0, 1.0 / 3.0, &mut points, &mut weights),
            4 => {
                s21(0.445948490915965, 0.223381589678011, &mut points, &mut weights);
                s21(0.091576213509771, 0.109951743655322, &mut points, &mut weights);
            }
            6 => {
                s21(
                    0.249286745170910421291638553107,
                    0.116786275726379366030289611386,
                    &mut points,
                    &mut weights,
                );
                s21(
                    0.063089014491502228340331602871,
                    0.050844906370206816920936809107,
                    &mut points,
                    &mut weights,
                );
                s111(
                    0.053145049844816947353249671631,
                    0.310352451033784405416607733956,
                    0.082851075618373575193553456420,
                    &mut points,
                    &mut weights,
                );
            }
            8 => {
                centroid(0.144315607677787, &mut points, &mut weights);
                s21(0.459292588292723, 0.095091634267285, &mut points, &mut weights);
                s21(0.170569307751760, 0.103217370534718, &mut points, &mut weights);
                s21(0.050547228317031, 0.032458497623198, &mut points, &mut weights);
                s111(
                    0.008394777409958,
                    0.263112829634638,
                    0.027230314174435,
                    &mut points,
                    &mut weights,
                );
            }
            _ => {
                return Err(SolverError::Parameter(format!(
                    "unsupported triangle quadrature order {order} (use 1, 2, 4, 6 or 8)"
                )))
            }
        }
        Ok(TriangleRule {
            order,
            points,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical points and area-scaled weights on triangle `(a, b, c)`.
    pub fn map(&self, tri: [Vec3; 3], area: f64) -> impl Iterator<Item = (Vec3, f64)> + '_ {
        self.points.iter().zip(&self.weights).map(move |(l, &w)| {
            let mut x = [0.0; 3];
            for (k, xk) in x.iter_mut().enumerate() {
                *xk = l[0] * tri[0][k] + l[1] * tri[1][k] + l[2] * tri[2][k];
            }
            (x, w * area)
        })
    }
}

/// Gauss-Legendre nodes (ascending) and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
