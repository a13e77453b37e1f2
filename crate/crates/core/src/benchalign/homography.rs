use std::fmt::Write as _;

use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

/// One point pair: `src` on the source image plane, `dst` in the photo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub src: [f64; 2],
    pub dst: [f64; 2],
}

/// At least four correspondences in general position.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<Correspondence>,
}

fn cross(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<Correspondence>) -> Result<Self> {
        if pairs.len() < 4 {
            return Err(Error::contract(format!("a homography needs at least 4 correspondences, got {}", pairs.len())));
        }
        if let Some(i) = pairs.iter().position(|p| !p.src.iter().chain(&p.dst).all(|v| v.is_finite())) {
            return Err(Error::contract(format!("correspondence {i} has a non-finite coordinate")));
        }
        if pairs.len() == 4 {
            let s: Vec<[f64; 2]> = pairs.iter().map(|p| p.src).collect();
            let scale = s
                .iter()
                .flat_map(|a| s.iter().map(move |b| (a[0] - b[0]).abs().max((a[1] - b[1]).abs())))
                .fold(0.0, f64::max);
            for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
                if cross(s[i], s[j], s[k]).abs() <= 1e-9 * scale * scale {
                    return Err(Error::contract(format!("source points {i}, {j} and {k} are collinear")));
                }
            }
        }
        Ok(CorrespondenceSet { pairs })
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    /// Parse the corner sidecar: one `src_x src_y dst_x dst_y` line per pair,
    /// `#` starts a comment.
    pub fn parse_sidecar(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.split('#').next().unwrap_or("").trim();
            if !body.is_empty() {
                let vals: Vec<f64> = body
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        offset,
                        message: format!("bad corner value: {e}"),
                    })?;
                if vals.len() != 4 {
                    return Err(Error::Parse {
                        offset,
                        message: format!("expected 4 values per corner line, got {}", vals.len()),
                    });
                }
                pairs.push(Correspondence {
                    src: [vals[0], vals[1]],
                    dst: [vals[2], vals[3]],
                });
            }
            offset += line.len();
        }
        Self::new(pairs)
    }

    pub fn to_sidecar(&self) -> String {
        let mut s = String::from("# src_x src_y dst_x dst_y\n");
        for p in &self.pairs {
            let _ = writeln!(s, "{} {} {} {}", p.src[0], p.src[1], p.dst[0], p.dst[1]);
        }
        s
    }
}

/// A planar projective map, scaled so `h33 = 1` when possible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("homography has non-finite entries"));
        }
        let fro = m.norm();
        if fro == 0.0 {
            return Err(Error::contract("homography is zero"));
        }
        let m = if m[(2, 2)].abs() > 1e-12 * fro { m / m[(2, 2)] } else { m / fro };
        if m.determinant().abs() <= 1e-12 {
            return Err(Error::contract("homography is singular"));
        }
        Ok(Homography(m))
    }

    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let v = self.0 * Vector3::new(p[0], p[1], 1.0);
        [v[0] / v[2], v[1] / v[2]]
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.0.try_inverse().ok_or_else(|| Error::contract("homography is singular"))?;
        Homography::new(inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Homography::new(self.0 * other.0)
    }
}

/// A fitted homography with its reprojection errors in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyFit {
    pub homography: Homography,
    pub mean_reprojection_error: f64,
    pub max_reprojection_error: f64,
}

/// Similarity taking points to zero centroid and mean distance √2.
fn normalizer(points: impl Iterator<Item = [f64; 2]> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (cx, cy) = points.clone().fold((0.0, 0.0), |(x, y), p| (x + p[0] / n, y + p[1] / n));
    let mean_dist = points.map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    if !(mean_dist > 0.0) {
        return Err(Error::contract("all points coincide"));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = t * Vector3::new(p[0], p[1], 1.0);
    [v[0] / v[2], v[1] / v[2]]
}

/// Least-squares normalized DLT mapping `src` onto `dst`.
pub fn estimate_homography(set: &CorrespondenceSet) -> Result<HomographyFit> {
    let pairs = set.pairs();
    let t_src = normalizer(pairs.iter().map(|p| p.src))?;
    let t_dst = normalizer(pairs.iter().map(|p| p.dst))?;
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for p in pairs {
        let [x, y] = transform(&t_src, p.src);
        let [u, v] = transform(&t_dst, p.dst);
        let rows = [
            [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u],
            [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v],
        ];
        for r in rows {
            let r = SMatrix::<f64, 9, 1>::from_row_slice(&r);
            ata += r * r.transpose();
        }
    }
    let eig = SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[8]];
    if eig.eigenvalues[order[1]] <= 1e-12 * largest {
        return Err(Error::contract("degenerate correspondences: the DLT system has rank below 8"));
    }
    let h = eig.eigenvectors.column(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().ok_or_else(|| Error::contract("singular normalizer"))?;
    let homography = Homography::new(t_dst_inv * hn * t_src)?;
    let errors: Vec<f64> = pairs
        .iter()
        .map(|p| {
            let q = homography.apply(p.src);
            (q[0] - p.dst[0]).hypot(q[1] - p.dst[1])
        })
        .collect();
    Ok(HomographyFit {
        homography,
        mean_reprojection_error: errors.iter().sum::<f64>() / errors.len() as f64,
        max_reprojection_error: errors.iter().copied().fold(0.0, f64::max),
    })
}
