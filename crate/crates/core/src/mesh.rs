//! Regular quaternary refinement of the threshold triangle and the
//! piecewise-constant spaces built on it.
//!
//! The triangle `Δ = {s_lo <= s1 <= s2 <= s_hi}` has vertices
//! `(s_lo, s_lo)`, `(s_lo, s_hi)`, `(s_hi, s_hi)`. Each refinement splits a
//! triangle `(a, b, c)` at its edge midpoints into the corner children
//! `(a, ab, ac)`, `(ab, b, bc)`, `(ac, bc, c)` (digits 1, 2, 3) and the
//! inverted central child `(bc, ac, ab)` (digit 4). Cells of a level are
//! stored in lexicographic digit order, so the children of cell `k` are
//! `4k .. 4k + 4` and the descendants of a coarse cell form one contiguous
//! block at any finer level.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ThresholdPair;

/// Default cap on refinement depth.
pub const DEFAULT_MAX_LEVEL: usize = 10;

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriDomain {
    pub s_lo: f64,
    pub s_hi: f64,
}

impl TriDomain {
    pub fn new(s_lo: f64, s_hi: f64) -> Result<Self> {
        if !(s_lo.is_finite() && s_hi.is_finite() && s_lo < s_hi) {
            return Err(Error::InvalidDomain(format!(
                "need finite s_lo < s_hi, got [{s_lo}, {s_hi}]"
            )));
        }
        Ok(Self { s_lo, s_hi })
    }

    pub fn area(&self) -> f64 {
        let w = self.s_hi - self.s_lo;
        0.5 * w * w
    }

    pub fn root(&self) -> Triangle {
        Triangle([[self.s_lo, self.s_lo], [self.s_lo, self.s_hi], [self.s_hi, self.s_hi]])
    }

    pub fn contains(&self, s: Point) -> bool {
        self.s_lo <= s[0] && s[0] <= s[1] && s[1] <= self.s_hi
    }

    /// Area of one cell at level `j`.
    pub fn cell_area(&self, level: usize) -> f64 {
        self.area() / 4f64.powi(level as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle(pub [Point; 3]);

impl Triangle {
    pub fn centroid(&self) -> Point {
        let [a, b, c] = self.0;
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn area(&self) -> f64 {
        let [a, b, c] = self.0;
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
    }

    /// Closed-set membership via barycentric signs.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        let [a, b, c] = self.0;
        let cross = |o: Point, u: Point, v: Point| (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0]);
        let d1 = cross(a, b, p);
        let d2 = cross(b, c, p);
        let d3 = cross(c, a, p);
        let neg = d1 < -tol || d2 < -tol || d3 < -tol;
        let pos = d1 > tol || d2 > tol || d3 > tol;
        !(neg && pos)
    }

    /// Strict interior membership.
    pub fn strictly_contains(&self, p: Point) -> bool {
        let [a, b, c] = self.0;
        let cross = |o: Point, u: Point, v: Point| (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0]);
        let d = [cross(a, b, p), cross(b, c, p), cross(c, a, p)];
        d.iter().all(|&x| x > 0.0) || d.iter().all(|&x| x < 0.0)
    }

    pub fn children(&self) -> [Triangle; 4] {
        let [a, b, c] = self.0;
        let mid = |p: Point, q: Point| [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        let (ab, ac, bc) = (mid(a, b), mid(a, c), mid(b, c));
        [
            Triangle([a, ab, ac]),
            Triangle([ab, b, bc]),
            Triangle([ac, bc, c]),
            Triangle([bc, ac, ab]),
        ]
    }
}

/// Address `Δ_{i1 i2 ... ij}` of a cell, digits in `1..=4`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CellAddress {
    digits: Vec<u8>,
}

impl CellAddress {
    pub fn new(digits: Vec<u8>) -> Result<Self> {
        if digits.iter().any(|d| !(1..=4).contains(d)) {
            return Err(Error::InvalidDomain(format!(
                "cell digits must lie in 1..=4: {digits:?}"
            )));
        }
        Ok(Self { digits })
    }

    /// Address of the zero-based linear index `k` at `level`.
    pub fn from_index(level: usize, k: usize) -> Self {
        let mut digits = vec![0u8; level];
        let mut rest = k;
        for d in digits.iter_mut().rev() {
            *d = (rest % 4) as u8 + 1;
            rest /= 4;
        }
        Self { digits }
    }

    pub fn level(&self) -> usize {
        self.digits.len()
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    /// Zero-based linear index (base-4 reading of `digit - 1`).
    pub fn index(&self) -> usize {
        self.digits.iter().fold(0, |k, &d| 4 * k + (d - 1) as usize)
    }
}

/// All cells of one refinement level.
#[derive(Clone, Debug)]
pub struct MeshLevel {
    domain: TriDomain,
    level: usize,
    cells: Vec<Triangle>,
}

impl MeshLevel {
    pub fn domain(&self) -> TriDomain {
        self.domain
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Triangle] {
        &self.cells
    }

    /// Nominal cell area `area(Δ) / 4^j`.
    pub fn cell_area(&self) -> f64 {
        self.domain.cell_area(self.level)
    }

    /// Geometric areas of the stored cells.
    pub fn areas(&self) -> Vec<f64> {
        self.cells.iter().map(Triangle::area).collect()
    }

    /// Quadrature points `ξ_{j,k}` (cell centroids).
    pub fn quad_points(&self) -> Vec<Point> {
        self.cells.iter().map(Triangle::centroid).collect()
    }

    /// Quadrature points as threshold pairs.
    pub fn thresholds(&self) -> Vec<ThresholdPair> {
        self.cells
            .iter()
            .map(|c| {
                let [s1, s2] = c.centroid();
                ThresholdPair { s1, s2: s2.max(s1) }
            })
            .collect()
    }

    pub fn address(&self, k: usize) -> CellAddress {
        CellAddress::from_index(self.level, k)
    }
}

/// Refines `domain` to level `j` under the default depth cap.
pub fn refine(domain: TriDomain, level: usize) -> Result<MeshLevel> {
    refine_capped(domain, level, DEFAULT_MAX_LEVEL)
}

pub fn refine_capped(domain: TriDomain, level: usize, max_level: usize) -> Result<MeshLevel> {
    if level > max_level {
        return Err(Error::LevelTooDeep { level, max: max_level });
    }
    let mut cells = vec![domain.root()];
    for _ in 0..level {
        cells = cells.iter().flat_map(Triangle::children).collect();
    }
    Ok(MeshLevel { domain, level, cells })
}

/// Cell-wise values of a piecewise-constant function on one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelValues {
    pub level: usize,
    pub values: Vec<f64>,
}

/// A distributed parameter `μ = (μ_1, ..., μ_ℓ)`, one piecewise-constant
/// function on `Δ` per kernel channel, stored as cell values.
///
/// The orthonormal coefficient of cell `k` is `v_k * sqrt(m_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributedParameter {
    domain: TriDomain,
    channels: Vec<ChannelValues>,
}

impl DistributedParameter {
    pub fn new(domain: TriDomain, channels: Vec<ChannelValues>) -> Result<Self> {
        for (i, c) in channels.iter().enumerate() {
            let n = 1usize << (2 * c.level);
            if c.values.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "channel {i} at level {} needs {n} values, got {}",
                    c.level,
                    c.values.len()
                )));
            }
        }
        Ok(Self { domain, channels })
    }

    /// Single channel at `level`.
    pub fn single(domain: TriDomain, level: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(domain, vec![ChannelValues { level, values }])
    }

    pub fn constant(domain: TriDomain, levels: &[usize], c: f64) -> Self {
        let channels = levels
            .iter()
            .map(|&level| ChannelValues {
                level,
                values: vec![c; 1 << (2 * level)],
            })
            .collect();
        Self { domain, channels }
    }

    pub fn zeros(domain: TriDomain, levels: &[usize]) -> Self {
        Self::constant(domain, levels, 0.0)
    }

    pub fn domain(&self) -> TriDomain {
        self.domain
    }

    pub fn channels(&self) -> &[ChannelValues] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [ChannelValues] {
        &mut self.channels
    }

    pub fn levels(&self) -> Vec<usize> {
        self.channels.iter().map(|c| c.level).collect()
    }

    /// Common level of all channels, if they share one.
    pub fn level(&self) -> Option<usize> {
        let first = self.channels.first()?.level;
        self.channels.iter().all(|c| c.level == first).then_some(first)
    }

    /// Total number of cell values over all channels.
    pub fn dof(&self) -> usize {
        self.channels.iter().map(|c| c.values.len()).sum()
    }

    /// Cell values of all channels concatenated.
    pub fn flat_values(&self) -> Vec<f64> {
        self.channels.iter().flat_map(|c| c.values.iter().copied()).collect()
    }

    /// Inverse of [`flat_values`](Self::flat_values) for the given channel levels.
    pub fn from_flat(domain: TriDomain, levels: &[usize], flat: &[f64]) -> Result<Self> {
        let need: usize = levels.iter().map(|&l| 1usize << (2 * l)).sum();
        if flat.len() != need {
            return Err(Error::DimensionMismatch(format!(
                "expected {need} flat values, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        let channels = levels
            .iter()
            .map(|&level| {
                let n = 1 << (2 * level);
                let values = flat[offset..offset + n].to_vec();
                offset += n;
                ChannelValues { level, values }
            })
            .collect();
        Ok(Self { domain, channels })
    }

    /// Cell areas aligned with [`flat_values`](Self::flat_values).
    pub fn flat_areas(&self) -> Vec<f64> {
        self.channels
            .iter()
            .flat_map(|c| std::iter::repeat_n(self.domain.cell_area(c.level), c.values.len()))
            .collect()
    }

    /// Orthonormal-basis coefficients `c_{j,k} = v_{j,k} sqrt(m_{j,k})`.
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        self.channels
            .iter()
            .map(|c| {
                let r = self.domain.cell_area(c.level).sqrt();
                c.values.iter().map(|v| v * r).collect()
            })
            .collect()
    }

    pub fn from_coefficients(domain: TriDomain, levels: &[usize], coeffs: &[Vec<f64>]) -> Result<Self> {
        if levels.len() != coeffs.len() {
            return Err(Error::DimensionMismatch("one coefficient vector per channel".into()));
        }
        let channels = levels
            .iter()
            .zip(coeffs)
            .map(|(&level, c)| {
                let r = domain.cell_area(level).sqrt();
                ChannelValues {
                    level,
                    values: c.iter().map(|x| x / r).collect(),
                }
            })
            .collect();
        Self::new(domain, channels)
    }

    /// `L²(Δ)` inner product summed over channels; both operands must share channel levels.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| {
                let m = self.domain.cell_area(a.level);
                m * a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>()
            })
            .sum())
    }

    /// Product-space norm `sqrt(Σ_i Σ_k v_{i,k}² m_k)`.
    pub fn norm(&self) -> f64 {
        self.channels
            .iter()
            .map(|c| self.domain.cell_area(c.level) * c.values.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.values.iter())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.levels() != other.levels() {
            return Err(Error::LevelMismatch(format!(
                "channel levels {:?} vs {:?}",
                self.levels(),
                other.levels()
            )));
        }
        Ok(())
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_compatible(other)?;
        let channels = self
            .channels
            .iter()
            .zip(&other.channels)
            .map(|(x, y)| ChannelValues {
                level: x.level,
                values: x.values.iter().zip(&y.values).map(|(u, v)| a * u + b * v).collect(),
            })
            .collect();
        Ok(Self {
            domain: self.domain,
            channels,
        })
    }

    /// `Φ_{J→j}`: orthogonal projection of every channel onto level `j`.
    pub fn restrict(&self, level: usize) -> Result<Self> {
        self.restrict_each(&vec![level; self.channels.len()])
    }

    /// Per-channel restriction.
    pub fn restrict_each(&self, levels: &[usize]) -> Result<Self> {
        if levels.len() != self.channels.len() {
            return Err(Error::DimensionMismatch("one target level per channel".into()));
        }
        let channels = self
            .channels
            .iter()
            .zip(levels)
            .map(|(c, &j)| {
                if j > c.level {
                    return Err(Error::LevelMismatch(format!(
                        "cannot restrict level {} to finer level {j}",
                        c.level
                    )));
                }
                let block = 1usize << (2 * (c.level - j));
                let values = c
                    .values
                    .chunks_exact(block)
                    .map(|b| b.iter().sum::<f64>() / block as f64)
                    .collect();
                Ok(ChannelValues { level: j, values })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            domain: self.domain,
            channels,
        })
    }

    /// Exact embedding `V_j ⊂ V_J` of every channel into level `J`.
    pub fn prolong(&self, level: usize) -> Result<Self> {
        self.prolong_each(&vec![level; self.channels.len()])
    }

    pub fn prolong_each(&self, levels: &[usize]) -> Result<Self> {
        if levels.len() != self.channels.len() {
            return Err(Error::DimensionMismatch("one target level per channel".into()));
        }
        let channels = self
            .channels
            .iter()
            .zip(levels)
            .map(|(c, &j)| {
                if j < c.level {
                    return Err(Error::LevelMismatch(format!(
                        "cannot prolong level {} to coarser level {j}",
                        c.level
                    )));
                }
                let block = 1usize << (2 * (j - c.level));
                let values = c.values.iter().flat_map(|&v| std::iter::repeat_n(v, block)).collect();
                Ok(ChannelValues { level: j, values })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            domain: self.domain,
            channels,
        })
    }

    /// Brings every channel to the given levels by restriction or prolongation.
    pub fn to_levels(&self, levels: &[usize]) -> Result<Self> {
        if levels.len() != self.channels.len() {
            return Err(Error::DimensionMismatch("one target level per channel".into()));
        }
        let channels = self
            .channels
            .iter()
            .zip(levels)
            .map(|(c, &j)| {
                let single = Self {
                    domain: self.domain,
                    channels: vec![c.clone()],
                };
                let moved = if j <= c.level {
                    single.restrict(j)
                } else {
                    single.prolong(j)
                }?;
                Ok(moved.channels.into_iter().next().expect("one channel"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            domain: self.domain,
            channels,
        })
    }

    /// CSV with columns `level, cell_index, channel, value`; `cell_index` is 1-based.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["level", "cell_index", "channel", "value"])?;
        for (i, c) in self.channels.iter().enumerate() {
            for (k, v) in c.values.iter().enumerate() {
                out.write_record(&[
                    c.level.to_string(),
                    (k + 1).to_string(),
                    (i + 1).to_string(),
                    format!("{v:e}"),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(domain: TriDomain, r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            level: usize,
            cell_index: usize,
            channel: usize,
            value: f64,
        }
        let mut rows: Vec<Row> = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| (r.channel, r.cell_index));
        let mut channels: Vec<ChannelValues> = Vec::new();
        for row in rows {
            if row.channel == 0 || row.cell_index == 0 {
                return Err(Error::InvalidInput("channel and cell_index are 1-based".into()));
            }
            if row.channel > channels.len() + 1 {
                return Err(Error::InvalidInput(format!(
                    "channel {} has no predecessor",
                    row.channel
                )));
            }
            if row.channel == channels.len() + 1 {
                channels.push(ChannelValues {
                    level: row.level,
                    values: Vec::new(),
                });
            }
            let c = channels.last_mut().expect("pushed above");
            if c.level != row.level || row.cell_index != c.values.len() + 1 {
                return Err(Error::InvalidInput(format!(
                    "inconsistent row for channel {} cell {}",
                    row.channel, row.cell_index
                )));
            }
            c.values.push(row.value);
        }
        Self::new(domain, channels)
    }
}

/// Pointwise function on `Δ`.
pub type PointFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// Approximates `Π_j μ` by averaging `mu_fn` over the level-`oversample` centroids inside each level-`j` cell.
pub fn project_analytic(
    domain: TriDomain,
    mu_fn: &(dyn Fn(Point) -> f64 + Sync),
    level: usize,
    oversample: usize,
) -> Result<DistributedParameter> {
    if oversample < level {
        return Err(Error::LevelMismatch(format!(
            "oversample level {oversample} below target level {level}"
        )));
    }
    let fine = refine_capped(domain, oversample, oversample.max(DEFAULT_MAX_LEVEL))?;
    let samples: Vec<f64> = fine.cells().iter().map(|c| mu_fn(c.centroid())).collect();
    DistributedParameter::single(domain, oversample, samples)?.restrict(level)
}

/// Truncated approximation-space norm `sqrt(Σ_{j=0}^{J} 2^{2αj} ‖(Π_j − Π_{j−1})μ‖²)`.
///
/// `Π_J μ` is taken from `project_analytic` at `J + oversample_extra`.
pub fn approx_seminorm(
    domain: TriDomain,
    mu_fn: &(dyn Fn(Point) -> f64 + Sync),
    alpha: f64,
    max_level: usize,
    oversample_extra: usize,
) -> Result<f64> {
    let partial = approx_partial_sums(domain, mu_fn, alpha, max_level, oversample_extra)?;
    Ok(*partial.last().expect("at least level 0"))
}

/// Square roots of the partial sums over `j = 0..=J`.
pub fn approx_partial_sums(
    domain: TriDomain,
    mu_fn: &(dyn Fn(Point) -> f64 + Sync),
    alpha: f64,
    max_level: usize,
    oversample_extra: usize,
) -> Result<Vec<f64>> {
    let top = project_analytic(domain, mu_fn, max_level, max_level + oversample_extra)?;
    let details = detail_norms(&top)?;
    let mut acc = 0.0;
    Ok(details
        .iter()
        .enumerate()
        .map(|(j, d)| {
            acc += 4f64.powf(alpha * j as f64) * d * d;
            acc.sqrt()
        })
        .collect())
}

/// `‖(Π_j − Π_{j−1})μ‖` for `j = 0..=J` of a single-channel parameter at level `J`.
pub fn detail_norms(mu: &DistributedParameter) -> Result<Vec<f64>> {
    let top = mu
        .level()
        .ok_or_else(|| Error::LevelMismatch("detail norms need a common level".into()))?;
    let domain = mu.domain();
    let mut out = Vec::with_capacity(top + 1);
    let mut coarse: Option<DistributedParameter> = None;
    for j in 0..=top {
        let pj = mu.restrict(j)?;
        let d = match &coarse {
            None => pj.norm(),
            Some(pc) => {
                let m = domain.cell_area(j);
                pj.channels()
                    .iter()
                    .zip(pc.channels())
                    .map(|(f, c)| {
                        f.values
                            .iter()
                            .enumerate()
                            .map(|(k, v)| {
                                let diff = v - c.values[k / 4];
                                diff * diff * m
                            })
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    .sqrt()
            }
        };
        out.push(d);
        coarse = Some(pj);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> TriDomain {
        TriDomain::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn level_zero_is_root() {
        let d = TriDomain::new(-2.0, 2.0).unwrap();
        let m = refine(d, 0).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.areas()[0], 8.0);
        let c = m.quad_points()[0];
        assert!((c[0] - (-2.0 - 2.0 + 2.0) / 3.0).abs() < 1e-15);
        assert!((c[1] - (-2.0 + 2.0 + 2.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn level_two_equal_areas() {
        let d = TriDomain::new(-1.0, 3.0).unwrap();
        let m = refine(d, 2).unwrap();
        assert_eq!(m.len(), 16);
        for a in m.areas() {
            assert!((a - 16.0 / 32.0).abs() < 1e-14);
        }
    }

    #[test]
    fn tiling_sums_to_domain_area() {
        let d = TriDomain::new(-0.7, 1.3).unwrap();
        let total: f64 = refine(d, 3).unwrap().areas().iter().sum();
        assert!((total - d.area()).abs() <= 1e-12 * d.area());
    }

    #[test]
    fn level_cap() {
        assert!(matches!(
            refine(unit(), 11),
            Err(Error::LevelTooDeep { level: 11, max: 10 })
        ));
    }

    #[test]
    fn centroids_inside_cells_and_domain() {
        let d = unit();
        let m = refine(d, 4).unwrap();
        for (c, p) in m.cells().iter().zip(m.quad_points()) {
            assert!(c.strictly_contains(p));
            assert!(d.contains(p));
        }
    }

    #[test]
    fn addresses_round_trip() {
        let a = CellAddress::new(vec![2, 4, 1]).unwrap();
        assert_eq!(a.index(), 4 * (4 + 3));
        assert_eq!(CellAddress::from_index(3, a.index()), a);
        assert!(CellAddress::new(vec![0]).is_err());
    }

    #[test]
    fn children_are_contiguous_blocks() {
        let d = unit();
        let coarse = refine(d, 2).unwrap();
        let fine = refine(d, 4).unwrap();
        for (k, c) in coarse.cells().iter().enumerate() {
            for f in &fine.cells()[16 * k..16 * (k + 1)] {
                assert!(c.contains(f.centroid(), 1e-14));
            }
        }
    }

    #[test]
    fn projection_of_constant() {
        let mu = project_analytic(unit(), &|_| 2.5, 3, 5).unwrap();
        assert!(mu.flat_values().iter().all(|v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn restrict_identity_and_constant() {
        let mu = DistributedParameter::single(unit(), 2, (0..16).map(f64::from).collect()).unwrap();
        assert_eq!(mu.restrict(2).unwrap(), mu);
        let c = DistributedParameter::constant(unit(), &[4], -1.5);
        assert!(c.restrict(1).unwrap().flat_values().iter().all(|&v| v == -1.5));
        assert!(matches!(mu.restrict(3), Err(Error::LevelMismatch(_))));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(DistributedParameter::zeros(unit(), &[3]).norm(), 0.0);
        let one = DistributedParameter::constant(unit(), &[3], 1.0);
        assert!((one.norm() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn coefficient_duality() {
        let mu = DistributedParameter::single(unit(), 1, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let c = mu.coefficients();
        let back = DistributedParameter::from_coefficients(unit(), &[1], &c).unwrap();
        for (a, b) in back.flat_values().iter().zip(mu.flat_values()) {
            assert!((a - b).abs() < 1e-14);
        }
        let norm2: f64 = c[0].iter().map(|x| x * x).sum();
        assert!((norm2.sqrt() - mu.norm()).abs() < 1e-14);
    }

    #[test]
    fn seminorm_of_constant_is_norm() {
        let d = TriDomain::new(-1.0, 1.0).unwrap();
        let s = approx_seminorm(d, &|_| 3.0, 1.0, 4, 2).unwrap();
        let n = DistributedParameter::constant(d, &[0], 3.0).norm();
        assert!((s - n).abs() < 1e-12);
    }

    #[test]
    fn seminorm_two_level_sum() {
        let d = unit();
        let v1 = DistributedParameter::single(d, 1, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let pi0 = v1.restrict(0).unwrap();
        let detail = v1.axpby(1.0, &pi0.prolong(1).unwrap(), -1.0).unwrap();
        let expected = (pi0.norm().powi(2) + 4.0 * detail.norm().powi(2)).sqrt();
        let fine = v1.prolong(3).unwrap();
        let dn = detail_norms(&fine).unwrap();
        let s = (dn[0].powi(2) + 4.0 * dn[1].powi(2) + 16.0 * dn[2].powi(2) + 64.0 * dn[3].powi(2)).sqrt();
        assert!((s - expected).abs() < 1e-13);
    }

    #[test]
    fn csv_round_trip() {
        let d = unit();
        let mu = DistributedParameter::new(
            d,
            vec![
                ChannelValues {
                    level: 1,
                    values: vec![1.0, 2.0, 3.0, 4.0],
                },
                ChannelValues {
                    level: 0,
                    values: vec![-0.125],
                },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("level,cell_index,channel,value\n"));
        let back = DistributedParameter::read_csv(d, buf.as_slice()).unwrap();
        assert_eq!(back, mu);
    }
}
