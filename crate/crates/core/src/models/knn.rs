use serde::{Deserialize, Serialize};

use super::surrogate::sq_dist_within;
use crate::data::Label;

/// Brute-force k-nearest-neighbour classifier with Euclidean distance.
///
/// Every training point at distance ≤ the k-th smallest distance votes, so
/// the prediction depends only on the multiset of training points. A tied
/// vote goes to the lower label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    points: Vec<Vec<f64>>,
    labels: Vec<Label>,
}

impl Knn {
    pub fn fit(points: Vec<Vec<f64>>, labels: Vec<Label>, k: usize) -> Self {
        assert_eq!(points.len(), labels.len());
        Self {
            k: k.max(1),
            points,
            labels,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        let k = self.k.min(self.points.len());
        // `nearest` holds the k smallest distances so far, ascending; any
        // point farther than its last entry cannot reach the final radius.
        let mut nearest: Vec<f64> = Vec::with_capacity(k + 1);
        let mut kept: Vec<(f64, Label)> = Vec::new();
        for (p, &label) in self.points.iter().zip(&self.labels) {
            let bound = if nearest.len() == k {
                nearest[k - 1]
            } else {
                f64::INFINITY
            };
            if let Some(d) = sq_dist_within(p, x, bound) {
                kept.push((d, label));
                let at = nearest.partition_point(|&v| v <= d);
                nearest.insert(at, d);
                nearest.truncate(k);
            }
        }
        let radius = nearest[k - 1];
        let mut votes = [0usize; 2];
        for (d, label) in kept {
            if d <= radius {
                votes[label.as_u8() as usize] += 1;
            }
        }
        if votes[1] > votes[0] {
            Label::Malware
        } else {
            Label::Benign
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_at_radius_includes_all_equidistant() {
        // Query at origin: one benign at distance 1, three malware and one
        // benign at distance 2. With k = 2 every point at distance 2 votes.
        let points = vec![
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![-2.0, 0.0],
            vec![0.0, 2.0],
            vec![0.0, -2.0],
        ];
        let labels = vec![
            Label::Benign,
            Label::Malware,
            Label::Malware,
            Label::Malware,
            Label::Benign,
        ];
        let knn = Knn::fit(points.clone(), labels.clone(), 2);
        assert_eq!(knn.predict(&[0.0, 0.0]), Label::Malware);
        let mut rev_p = points;
        let mut rev_l = labels;
        rev_p.reverse();
        rev_l.reverse();
        assert_eq!(
            Knn::fit(rev_p, rev_l, 2).predict(&[0.0, 0.0]),
            Label::Malware
        );
    }

    #[test]
    fn even_vote_goes_to_benign() {
        let knn = Knn::fit(
            vec![vec![1.0], vec![-1.0]],
            vec![Label::Malware, Label::Benign],
            2,
        );
        assert_eq!(knn.predict(&[0.0]), Label::Benign);
    }
}
