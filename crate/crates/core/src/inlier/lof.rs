use super::gmm::check_points;
use crate::error::{AsdError, Result};

/// Added to the mean reachability distance before inversion, so duplicate
/// points yield a large but finite density.
pub const LRD_EPS: f64 = 1e-10;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Local outlier factor over a fixed reference set. Exactly `k` neighbours
/// are used; distance ties are broken by reference index.
#[derive(Debug, Clone, PartialEq)]
pub struct Lof {
    k: usize,
    points: Vec<Vec<f64>>,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
    degenerate: bool,
}

impl Lof {
    pub fn fit(points: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        check_points(&points)?;
        if k == 0 {
            return Err(AsdError::Config("LOF needs k >= 1".into()));
        }
        if points.len() <= k {
            return Err(AsdError::InvalidInput(format!(
                "LOF with k = {k} needs more than {k} points, got {}",
                points.len()
            )));
        }
        let neighbours: Vec<Vec<(f64, usize)>> = (0..points.len())
            .map(|i| knn(&points, &points[i], k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = neighbours.iter().map(|nb| nb[k - 1].0).collect();
        let mut degenerate = false;
        let lrd = neighbours
            .iter()
            .map(|nb| {
                let mean_reach = reach_mean(nb, &k_distance);
                degenerate |= mean_reach == 0.0;
                1.0 / (mean_reach + LRD_EPS)
            })
            .collect();
        if degenerate {
            log::warn!("LOF reference set has duplicate points; densities are epsilon-bounded");
        }
        Ok(Lof {
            k,
            points,
            k_distance,
            lrd,
            degenerate,
        })
    }

    /// Reassembles a fitted model from stored state.
    pub fn from_parts(
        k: usize,
        points: Vec<Vec<f64>>,
        k_distance: Vec<f64>,
        lrd: Vec<f64>,
        degenerate: bool,
    ) -> Result<Self> {
        check_points(&points)?;
        if k == 0 || points.len() <= k || k_distance.len() != points.len() || lrd.len() != points.len() {
            return Err(AsdError::Shape("inconsistent LOF state".into()));
        }
        Ok(Lof {
            k,
            points,
            k_distance,
            lrd,
            degenerate,
        })
    }

    fn lof_from(&self, nb: &[(f64, usize)]) -> f64 {
        let own = 1.0 / (reach_mean(nb, &self.k_distance) + LRD_EPS);
        let mean_lrd = nb.iter().map(|&(_, j)| self.lrd[j]).sum::<f64>() / nb.len() as f64;
        mean_lrd / own
    }

    /// LOF of an external query against the whole reference set.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(AsdError::Shape(format!("query has {} dims, model has {}", x.len(), self.dim())));
        }
        Ok(self.lof_from(&knn(&self.points, x, self.k, None)))
    }

    /// LOF of each reference point, excluding the point from its own neighbourhood.
    pub fn reference_scores(&self) -> Vec<f64> {
        (0..self.points.len())
            .map(|i| self.lof_from(&knn(&self.points, &self.points[i], self.k, Some(i))))
            .collect()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn k_distances(&self) -> &[f64] {
        &self.k_distance
    }

    pub fn lrd(&self) -> &[f64] {
        &self.lrd
    }

    /// True when some reference point has zero mean reachability distance.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

fn reach_mean(nb: &[(f64, usize)], k_distance: &[f64]) -> f64 {
    nb.iter().map(|&(d, j)| d.max(k_distance[j])).sum::<f64>() / nb.len() as f64
}

fn knn(points: &[Vec<f64>], x: &[f64], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != exclude)
        .map(|(j, p)| (dist(x, p), j))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<Vec<f64>> {
        (0..n * n).map(|i| vec![(i / n) as f64, (i % n) as f64]).collect()
    }

    #[test]
    fn grid_interior_is_inlier() {
        let lof = Lof::fit(grid(12), 4).unwrap();
        let s = lof.score(&[5.5, 5.5]).unwrap();
        assert!((s - 1.0).abs() < 0.05, "{s}");
        let refs = lof.reference_scores();
        let centre = refs[6 * 12 + 6];
        assert!((centre - 1.0).abs() < 0.05, "{centre}");
    }

    #[test]
    fn far_query_is_outlier_and_monotone() {
        let lof = Lof::fit(grid(6), 5).unwrap();
        let near = lof.score(&[2.0, 2.0]).unwrap();
        assert!((near - 1.0).abs() < 0.1, "{near}");
        let far = lof.score(&[2.5, 2.5 + 50.0]).unwrap();
        let farther = lof.score(&[2.5, 2.5 + 100.0]).unwrap();
        assert!(far > 10.0 && farther > far);
    }

    #[test]
    fn identical_points_flagged() {
        let lof = Lof::fit(vec![vec![1.0, 2.0]; 6], 3).unwrap();
        assert!(lof.is_degenerate());
        assert!(lof.k_distances().iter().all(|&d| d == 0.0));
        assert!(lof.score(&[1.0, 2.0]).unwrap().is_finite());
    }

    #[test]
    fn minimal_reference_set() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        let lof = Lof::fit(pts, 2).unwrap();
        assert!(lof.reference_scores().iter().all(|s| s.is_finite() && *s > 0.0));
        assert!(Lof::fit(vec![vec![0.0], vec![1.0]], 2).is_err());
    }

    #[test]
    fn ties_broken_by_index() {
        let pts = vec![vec![1.0], vec![-1.0], vec![1.0], vec![5.0]];
        let nb = knn(&pts, &[0.0], 2, None);
        assert_eq!(nb.iter().map(|n| n.1).collect::<Vec<_>>(), vec![0, 1]);
    }
}
