use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `1 - SS_res / SS_tot`; `0` when the targets are constant and predicted exactly.
pub fn r2_score(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || targets.is_empty() {
        return Err(Error::dim("r2_score", (predictions.len(), 1), (targets.len(), 1)));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_res: f64 = predictions.iter().zip(targets).map(|(p, t)| (t - p).powi(2)).sum();
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Index of the largest entry per row (first on ties).
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Mean of per-class recalls over classes present in `targets`.
pub fn balanced_accuracy(predicted: &[usize], targets: &[usize], classes: usize) -> Result<f64> {
    if predicted.len() != targets.len() || targets.is_empty() {
        return Err(Error::dim("balanced_accuracy", (predicted.len(), 1), (targets.len(), 1)));
    }
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&p, &t) in predicted.iter().zip(targets) {
        if t >= classes {
            return Err(Error::Input(format!("class index {t} outside 0..{classes}")));
        }
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let recalls: Vec<f64> =
        hits.iter().zip(&totals).filter(|(_, &n)| n > 0).map(|(&h, &n)| h as f64 / n as f64).collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Accuracy of the worst `(target, group)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub worst: f64,
    /// `(target, group, accuracy, count)` for every non-empty cell.
    pub cells: Vec<(usize, usize, f64, usize)>,
    /// Cells that had no samples and were left out.
    pub empty: Vec<(usize, usize)>,
}

pub fn worst_group_accuracy(
    predicted: &[usize],
    targets: &[usize],
    groups: &[usize],
    classes: usize,
    n_groups: usize,
) -> Result<GroupAccuracy> {
    if predicted.len() != targets.len() || groups.len() != targets.len() {
        return Err(Error::dim("worst_group_accuracy", (predicted.len(), 1), (groups.len(), 1)));
    }
    let mut hits = vec![vec![0usize; n_groups]; classes];
    let mut totals = vec![vec![0usize; n_groups]; classes];
    for ((&p, &t), &g) in predicted.iter().zip(targets).zip(groups) {
        if t >= classes || g >= n_groups {
            return Err(Error::Input(format!("cell ({t}, {g}) outside {classes}×{n_groups}")));
        }
        totals[t][g] += 1;
        if p == t {
            hits[t][g] += 1;
        }
    }
    let mut cells = Vec::new();
    let mut empty = Vec::new();
    for t in 0..classes {
        for g in 0..n_groups {
            if totals[t][g] == 0 {
                empty.push((t, g));
            } else {
                cells.push((t, g, hits[t][g] as f64 / totals[t][g] as f64, totals[t][g]));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Input("no non-empty groups".into()));
    }
    let worst = cells.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    Ok(GroupAccuracy { worst, cells, empty })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_reference_cases() {
        let t = [1.0, 2.0, 4.0];
        assert_eq!(r2_score(&t, &t).unwrap(), 1.0);
        let mean = 7.0 / 3.0;
        assert!(r2_score(&[mean; 3], &t).unwrap().abs() < 1e-15);
        assert!(r2_score(&[0.0; 3], &t).unwrap() < 0.0);
    }

    #[test]
    fn balanced_accuracy_cases() {
        assert_eq!(balanced_accuracy(&[0, 1, 1], &[0, 1, 1], 2).unwrap(), 1.0);
        // class 0: 1/2, class 1: 2/2
        assert_eq!(balanced_accuracy(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap(), 0.75);
    }

    #[test]
    fn worst_group_from_hand_table() {
        // (target, group): (0,0) 3/4, (0,1) 1/2, (1,0) 0/1, (1,1) 2/2
        let rows = [
            (0, 0, 0),
            (0, 0, 0),
            (0, 0, 0),
            (1, 0, 0),
            (0, 0, 1),
            (1, 0, 1),
            (0, 1, 0),
            (1, 1, 1),
            (1, 1, 1),
        ];
        let p: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let t: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let g: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let res = worst_group_accuracy(&p, &t, &g, 2, 2).unwrap();
        assert_eq!(res.worst, 0.0);
        assert_eq!(res.cells.len(), 4);
        let without: Vec<usize> = (0..9).filter(|&i| !(t[i] == 1 && g[i] == 0)).collect();
        let pick = |v: &[usize]| without.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let res = worst_group_accuracy(&pick(&p), &pick(&t), &pick(&g), 2, 2).unwrap();
        assert_eq!(res.worst, 0.5);
        assert_eq!(res.empty, vec![(1, 0)]);
    }

    #[test]
    fn argmax_first_on_ties() {
        let m = Matrix::from_rows(&[vec![0.2, 0.5, 0.5], vec![0.9, 0.0, 0.1]]).unwrap();
        assert_eq!(argmax_rows(&m), vec![1, 0]);
    }
}
