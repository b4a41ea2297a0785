//! Capacity-aware coverage matrices and the coverage score.
//!
//! For each site, areas are ranked by distance and covered greedily while
//! the accumulated demand `w * p * P_j` fits in the site's weekly capacity.
//! The first area that does not fit ends the prefix.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Allocation, CandidateSite, Region};
use crate::error::{Error, Result};

/// Relative slack on the capacity comparison, absorbing the rounding of
/// decimal target fractions such as 0.1.
const CAPACITY_RTOL: f64 = 1e-12;

/// Whether `raw` population (already multiplied by the per-area weights) fits
/// a site of `capacity` tests/week when a fraction `target_fraction` of it
/// must be served.
pub fn demand_fits(raw: f64, target_fraction: f64, capacity: u64) -> bool {
    raw * target_fraction <= capacity as f64 * (1.0 + CAPACITY_RTOL)
}

/// Binary coverage matrix for the sites of one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub site_type: u32,
    /// Row `r` describes the site at `site_indices[r]` of the full candidate list.
    pub site_indices: Vec<usize>,
    pub a: Vec<Vec<bool>>,
    /// Total coverable raw population per site, `capacity / p`.
    pub tp: Vec<f64>,
    pub target_fraction: f64,
    pub weights_w: Vec<f64>,
}

impl CoverageMatrix {
    pub fn num_sites(&self) -> usize {
        self.a.len()
    }

    pub fn num_areas(&self) -> usize {
        self.weights_w.len()
    }

    pub fn row_count(&self, row: usize) -> usize {
        self.a[row].iter().filter(|&&c| c).count()
    }
}

/// Builds the coverage matrix for sites sharing one type, with `w = 1`.
pub fn build_coverage_matrix(
    region: &Region,
    sites: &[CandidateSite],
    target_fraction: f64,
) -> Result<CoverageMatrix> {
    let w = vec![1.0; region.len()];
    build_coverage_matrix_weighted(region, sites, target_fraction, &w)
}

pub fn build_coverage_matrix_weighted(
    region: &Region,
    sites: &[CandidateSite],
    target_fraction: f64,
    weights_w: &[f64],
) -> Result<CoverageMatrix> {
    if region.is_empty() {
        return Err(Error::NoAreas);
    }
    if sites.is_empty() {
        return Err(Error::NoSites);
    }
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(Error::InvalidFraction(target_fraction));
    }
    if weights_w.len() != region.len() {
        return Err(Error::Dimension(format!(
            "{} area weights for {} areas",
            weights_w.len(),
            region.len()
        )));
    }
    if weights_w.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter(
            "area weights must be finite and nonnegative".into(),
        ));
    }
    let site_type = sites[0].site_type;
    if sites.iter().any(|s| s.site_type != site_type) {
        return Err(Error::MixedSiteTypes);
    }
    for s in sites {
        s.validate()?;
    }

    let a = sites
        .par_iter()
        .map(|site| coverage_row(region, site, target_fraction, weights_w))
        .collect();
    Ok(CoverageMatrix {
        site_type,
        site_indices: (0..sites.len()).collect(),
        a,
        tp: sites
            .iter()
            .map(|s| s.capacity as f64 / target_fraction)
            .collect(),
        target_fraction,
        weights_w: weights_w.to_vec(),
    })
}

/// Area indices sorted by ascending distance from `site`, ties by area id.
pub fn areas_by_distance(region: &Region, site: &CandidateSite) -> Vec<usize> {
    let dist: Vec<f64> = region
        .areas
        .iter()
        .map(|a| site.location.distance(&a.centroid))
        .collect();
    let mut order: Vec<usize> = (0..region.len()).collect();
    order.sort_by(|&p, &q| {
        dist[p]
            .partial_cmp(&dist[q])
            .unwrap_or(Ordering::Equal)
            .then_with(|| region.areas[p].id.cmp(&region.areas[q].id))
    });
    order
}

fn coverage_row(region: &Region, site: &CandidateSite, p: f64, w: &[f64]) -> Vec<bool> {
    let mut row = vec![false; region.len()];
    let mut raw = 0.0;
    for j in areas_by_distance(region, site) {
        raw += w[j] * region.areas[j].population as f64;
        if !demand_fits(raw, p, site.capacity) {
            break;
        }
        row[j] = true;
    }
    row
}

/// One coverage matrix per site type, addressed by global site index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStack {
    pub matrices: Vec<CoverageMatrix>,
    num_areas: usize,
    /// Global site index -> (matrix, row).
    lookup: Vec<(usize, usize)>,
}

impl CoverageStack {
    /// Groups `sites` by type and builds one matrix per type present.
    pub fn build(region: &Region, sites: &[CandidateSite], target_fraction: f64) -> Result<Self> {
        let w = vec![1.0; region.len()];
        Self::build_weighted(region, sites, target_fraction, &w)
    }

    pub fn build_weighted(
        region: &Region,
        sites: &[CandidateSite],
        target_fraction: f64,
        weights_w: &[f64],
    ) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::NoSites);
        }
        let mut types: Vec<u32> = sites.iter().map(|s| s.site_type).collect();
        types.sort_unstable();
        types.dedup();

        let mut lookup = vec![(0, 0); sites.len()];
        let mut matrices = Vec::with_capacity(types.len());
        for (mi, &t) in types.iter().enumerate() {
            let global: Vec<usize> = (0..sites.len())
                .filter(|&i| sites[i].site_type == t)
                .collect();
            let subset: Vec<CandidateSite> = global.iter().map(|&i| sites[i].clone()).collect();
            let mut matrix =
                build_coverage_matrix_weighted(region, &subset, target_fraction, weights_w)?;
            for (row, &i) in global.iter().enumerate() {
                lookup[i] = (mi, row);
            }
            matrix.site_indices = global;
            matrices.push(matrix);
        }
        Ok(Self {
            matrices,
            num_areas: region.len(),
            lookup,
        })
    }

    pub fn num_areas(&self) -> usize {
        self.num_areas
    }

    pub fn num_sites(&self) -> usize {
        self.lookup.len()
    }

    /// Coverage row of a global site index.
    pub fn row(&self, site: usize) -> &[bool] {
        let (m, r) = self.lookup[site];
        &self.matrices[m].a[r]
    }
}

/// `e_j = 1` iff at least one selected site of any type covers area `j`.
pub fn covered_indicators(stack: &CoverageStack, allocation: &Allocation) -> Result<Vec<bool>> {
    covered_by_indices(stack, allocation.selected())
}

pub(crate) fn covered_by_indices(stack: &CoverageStack, selected: &[usize]) -> Result<Vec<bool>> {
    let n = stack.num_sites();
    let mut e = vec![false; stack.num_areas()];
    for &i in selected {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        for (ej, &aij) in e.iter_mut().zip(stack.row(i)) {
            *ej |= aij;
        }
    }
    Ok(e)
}

/// `f1 = sum_j e_j`.
pub fn coverage_score(e: &[bool]) -> usize {
    e.iter().filter(|&&c| c).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Area, Point};
    use proptest::prelude::*;

    fn line_region(pops: &[u64]) -> Region {
        let areas = pops
            .iter()
            .enumerate()
            .map(|(j, &p)| Area::new(format!("a{j}"), Point::new((j + 1) as f64, 0.0), p))
            .collect();
        Region::new(areas, vec![])
    }

    fn site(x: f64, capacity: u64, t: u32) -> CandidateSite {
        CandidateSite::new(format!("s{x}"), Point::new(x, 0.0), capacity, t)
    }

    #[test]
    fn prefix_stops_at_first_overflow() {
        // distances 1, 2, 3 from the origin; 50 + 60 = 110 <= 120 < 180
        let r = line_region(&[50, 60, 70]);
        let m = build_coverage_matrix(&r, &[site(0.0, 120, 1)], 1.0).unwrap();
        assert_eq!(m.a[0], vec![true, true, false]);
        assert_eq!(m.tp, vec![120.0]);
    }

    #[test]
    fn weekly_capacity_boundary_at_ten_percent() {
        let r = line_region(&[11_200]);
        let m = build_coverage_matrix(&r, &[site(0.0, 1120, 1)], 0.10).unwrap();
        assert_eq!(m.a[0], vec![true]);
        let r = line_region(&[11_201]);
        let m = build_coverage_matrix(&r, &[site(0.0, 1120, 1)], 0.10).unwrap();
        assert_eq!(m.a[0], vec![false]);
    }

    #[test]
    fn large_capacity_covers_everything() {
        let r = line_region(&[10, 20, 30, 40]);
        let m = build_coverage_matrix(&r, &[site(2.5, 1_000, 1)], 1.0).unwrap();
        assert!(m.a[0].iter().all(|&c| c));
    }

    #[test]
    fn zero_population_areas_ride_along_in_the_prefix() {
        let r = line_region(&[50, 0, 80, 0]);
        let m = build_coverage_matrix(&r, &[site(0.0, 60, 1)], 1.0).unwrap();
        assert_eq!(m.a[0], vec![true, true, false, false]);
    }

    #[test]
    fn ties_broken_by_area_id() {
        // b and a both at distance 1; a sorts first by id
        let areas = vec![
            Area::new("b", Point::new(1.0, 0.0), 10),
            Area::new("a", Point::new(-1.0, 0.0), 10),
        ];
        let r = Region::new(areas, vec![]);
        let m = build_coverage_matrix(&r, &[site(0.0, 15, 1)], 1.0).unwrap();
        assert_eq!(m.a[0], vec![false, true]);
    }

    #[test]
    fn errors() {
        let empty = Region::new(vec![], vec![]);
        assert_eq!(
            build_coverage_matrix(&empty, &[site(0.0, 1, 1)], 0.5),
            Err(Error::NoAreas)
        );
        let r = line_region(&[1]);
        assert_eq!(
            build_coverage_matrix(&r, &[site(0.0, 1, 1)], 0.0),
            Err(Error::InvalidFraction(0.0))
        );
        assert_eq!(
            build_coverage_matrix(&r, &[site(0.0, 1, 1)], 1.5),
            Err(Error::InvalidFraction(1.5))
        );
        assert_eq!(
            build_coverage_matrix(&r, &[site(0.0, 1, 1), site(1.0, 1, 2)], 0.5),
            Err(Error::MixedSiteTypes)
        );
    }

    fn stack_from_rows(rows: &[&[bool]]) -> CoverageStack {
        let m = rows[0].len();
        CoverageStack {
            matrices: vec![CoverageMatrix {
                site_type: 1,
                site_indices: (0..rows.len()).collect(),
                a: rows.iter().map(|r| r.to_vec()).collect(),
                tp: vec![0.0; rows.len()],
                target_fraction: 1.0,
                weights_w: vec![1.0; m],
            }],
            num_areas: m,
            lookup: (0..rows.len()).map(|r| (0, r)).collect(),
        }
    }

    #[test]
    fn union_rule() {
        let stack = stack_from_rows(&[&[true, true, false], &[false, true, true]]);
        let alloc = Allocation::new(vec![0, 1], 2, 2).unwrap();
        assert_eq!(
            covered_indicators(&stack, &alloc).unwrap(),
            vec![true, true, true]
        );
        let none = Allocation::new(vec![], 0, 2).unwrap();
        assert_eq!(covered_indicators(&stack, &none).unwrap(), vec![false; 3]);
        assert!(matches!(
            covered_by_indices(&stack, &[5]),
            Err(Error::IndexOutOfRange { index: 5, n: 2 })
        ));
    }

    #[test]
    fn multi_type_stack_is_binary() {
        let r = line_region(&[10, 10, 10]);
        let sites = vec![site(0.0, 100, 1), site(0.5, 100, 2), site(9.0, 5, 2)];
        let stack = CoverageStack::build(&r, &sites, 1.0).unwrap();
        assert_eq!(stack.matrices.len(), 2);
        assert_eq!(stack.matrices[1].site_indices, vec![1, 2]);
        let alloc = Allocation::new(vec![0, 1], 2, 3).unwrap();
        let e = covered_indicators(&stack, &alloc).unwrap();
        assert_eq!(e, vec![true; 3]);
        assert_eq!(coverage_score(&e), 3);
        assert_eq!(stack.row(2), &[false, false, false]);
    }

    #[test]
    fn coverage_score_sums() {
        assert_eq!(coverage_score(&[false, false, false]), 0);
        assert_eq!(coverage_score(&[true; 7]), 7);
        assert_eq!(coverage_score(&[true, false, true, true]), 3);
    }

    fn arb_instance() -> impl Strategy<Value = (Region, Vec<CandidateSite>, f64)> {
        (
            prop::collection::vec((0u64..3000, -20.0f64..20.0, -20.0f64..20.0), 1..25),
            prop::collection::vec((1u64..2000, -20.0f64..20.0, -20.0f64..20.0), 1..8),
            0.05f64..1.0,
        )
            .prop_map(|(areas, sites, p)| {
                let areas = areas
                    .into_iter()
                    .enumerate()
                    .map(|(j, (pop, x, y))| Area::new(format!("a{j:02}"), Point::new(x, y), pop))
                    .collect();
                let sites = sites
                    .into_iter()
                    .enumerate()
                    .map(|(i, (cap, x, y))| {
                        CandidateSite::new(format!("s{i}"), Point::new(x, y), cap, 1)
                    })
                    .collect();
                (Region::new(areas, vec![]), sites, p)
            })
    }

    proptest! {
        #[test]
        fn prefix_and_capacity_hold((region, sites, p) in arb_instance()) {
            let m = build_coverage_matrix(&region, &sites, p).unwrap();
            for (i, site) in sites.iter().enumerate() {
                let order = areas_by_distance(&region, site);
                let row = &m.a[i];
                let covered = order.iter().take_while(|&&j| row[j]).count();
                prop_assert!(order[covered..].iter().all(|&j| !row[j]), "not a prefix");
                let raw: f64 = order[..covered].iter().map(|&j| region.areas[j].population as f64).sum();
                prop_assert!(demand_fits(raw, p, site.capacity));
                if covered < order.len() {
                    let next = raw + region.areas[order[covered]].population as f64;
                    prop_assert!(!demand_fits(next, p, site.capacity), "prefix stopped early");
                }
            }
        }

        #[test]
        fn larger_fraction_never_adds_areas((region, sites, p) in arb_instance(), bump in 1.0f64..3.0) {
            let q = (p * bump).min(1.0);
            let lo = build_coverage_matrix(&region, &sites, p).unwrap();
            let hi = build_coverage_matrix(&region, &sites, q).unwrap();
            for (r_lo, r_hi) in lo.a.iter().zip(&hi.a) {
                prop_assert!(r_lo.iter().zip(r_hi).all(|(&l, &h)| l || !h));
            }
        }

        #[test]
        fn coverage_monotone_in_selection((region, sites, p) in arb_instance(), mask in prop::collection::vec(any::<bool>(), 8), extra in prop::collection::vec(any::<bool>(), 8)) {
            let stack = CoverageStack::build(&region, &sites, p).unwrap();
            let n = sites.len();
            let small: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
            let big: Vec<usize> = (0..n).filter(|&i| mask[i] || extra[i]).collect();
            let e_small = covered_by_indices(&stack, &small).unwrap();
            let e_big = covered_by_indices(&stack, &big).unwrap();
            prop_assert!(e_small.iter().zip(&e_big).all(|(&s, &b)| !s || b));
            prop_assert!(coverage_score(&e_small) <= coverage_score(&e_big));
        }
    }
}
