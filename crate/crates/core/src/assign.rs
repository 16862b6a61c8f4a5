//! Rectangular linear assignment and IoU pre-matching.

use std::collections::BTreeSet;

use crate::config::TrackerConfig;
use crate::geometry::BBox;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.l.max(b.l)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.t.max(b.t)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Minimum-cost assignment of every row to a distinct column; requires
/// `rows <= cols`. Shortest augmenting path with potentials, O(n²m).
fn hungarian_rows(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    debug_assert!(n <= cols);
    let m = cols;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Minimum-cost matching of cardinality `min(rows, cols)`, as `(row, col)`
/// pairs sorted by row.
pub fn solve_lap_min(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    if rows <= cols {
        hungarian_rows(cost, cols)
            .into_iter()
            .enumerate()
            .collect()
    } else {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| cost[r][c]).collect())
            .collect();
        let mut pairs: Vec<(usize, usize)> = hungarian_rows(&transposed, rows)
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect();
        pairs.sort_unstable();
        pairs
    }
}

/// Maximum-value matching (higher is better). Pairs with value `<= min_value`
/// are dropped after solving.
pub fn solve_lap_max(values: &[Vec<f64>], min_value: f64) -> Vec<(usize, usize)> {
    let neg: Vec<Vec<f64>> = values
        .iter()
        .map(|r| r.iter().map(|x| -x).collect())
        .collect();
    solve_lap_min(&neg)
        .into_iter()
        .filter(|&(r, c)| values[r][c] > min_value)
        .collect()
}

/// Edge adjustments chosen by IoU pre-matching, as `(track, detection)` index pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Prematch {
    /// Edges that receive `+iou_bias`.
    pub bonus: BTreeSet<(usize, usize)>,
    /// Edges whose weight is reset to zero.
    pub pruned: BTreeSet<(usize, usize)>,
}

/// Per-camera Hungarian matching between motion-predicted track boxes and
/// detection boxes. `track_boxes[i][m]` is track `i`'s predicted box in
/// camera `m`; `det_boxes[j]` is `(camera, box)` of detection `j`.
pub fn prematch_bias(
    track_boxes: &[Vec<Option<BBox>>],
    det_boxes: &[(usize, BBox)],
    num_cameras: usize,
    config: &TrackerConfig,
) -> Prematch {
    let mut out = Prematch::default();
    if !config.enable_prematch {
        return out;
    }
    for cam in 0..num_cameras {
        let rows: Vec<(usize, BBox)> = track_boxes
            .iter()
            .enumerate()
            .filter_map(|(i, boxes)| boxes.get(cam).copied().flatten().map(|b| (i, b)))
            .collect();
        let cols: Vec<(usize, BBox)> = det_boxes
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| *c == cam)
            .map(|(j, (_, b))| (j, *b))
            .collect();
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        let matrix: Vec<Vec<f64>> = rows
            .iter()
            .map(|(_, tb)| cols.iter().map(|(_, db)| iou(tb, db)).collect())
            .collect();
        let matches = solve_lap_max(&matrix, 0.0);
        for &(r, c) in &matches {
            let (ti, dj) = (rows[r].0, cols[c].0);
            out.bonus.insert((ti, dj));
            if config.enable_prune {
                for &(other_j, _) in &cols {
                    if other_j != dj {
                        out.pruned.insert((ti, other_j));
                    }
                }
                for &(other_i, _) in &rows {
                    if other_i != ti {
                        out.pruned.insert((other_i, dj));
                    }
                }
            }
        }
    }
    // a pair matched in one camera is never pruned from another
    let bonus = out.bonus.clone();
    out.pruned.retain(|p| !bonus.contains(p));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(l: f64, t: f64, w: f64, h: f64) -> BBox {
        BBox::new(l, t, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &bx(1.0, 0.0, 2.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
        // touching edges
        assert_eq!(iou(&a, &bx(2.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn lap_examples() {
        let diag: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| if i == j { 0.9 } else { 0.1 }).collect())
            .collect();
        assert_eq!(solve_lap_max(&diag, 0.0), vec![(0, 0), (1, 1), (2, 2)]);
        let anti = vec![vec![0.6, 0.5], vec![0.5, 0.0]];
        assert_eq!(solve_lap_max(&anti, 0.0), vec![(0, 1), (1, 0)]);
        assert!(solve_lap_max(&[vec![0.2, 0.1], vec![0.0, 0.3]], 0.5).is_empty());
        assert!(solve_lap_max(&[], 0.0).is_empty());
        assert!(solve_lap_max(&[vec![], vec![]], 0.0).is_empty());
        assert_eq!(solve_lap_max(&[vec![0.9], vec![0.4]], 0.0), vec![(0, 0)]);
    }

    fn tracks_for(boxes: &[Option<BBox>]) -> Vec<Vec<Option<BBox>>> {
        boxes.iter().map(|b| vec![*b]).collect()
    }

    #[test]
    fn prematch_examples() {
        let cfg = TrackerConfig {
            enable_prune: false,
            ..TrackerConfig::default()
        };
        let det = [(0usize, bx(0.0, 0.0, 10.0, 10.0))];
        // IoU 0.8: 10x10 vs shifted overlap 10x(80/9)... use exact overlap
        let t = bx(0.0, 1.0, 10.0, 10.0);
        assert!(iou(&t, &det[0].1) > 0.8);
        let p = prematch_bias(&tracks_for(&[Some(t)]), &det, 1, &cfg);
        assert_eq!(p.bonus, BTreeSet::from([(0, 0)]));

        let p = prematch_bias(&tracks_for(&[None]), &det, 1, &cfg);
        assert!(p.bonus.is_empty());

        let strong = bx(0.0, 0.5, 10.0, 10.0);
        let weak = bx(5.0, 3.0, 10.0, 10.0);
        let (i1, i2) = (iou(&strong, &det[0].1), iou(&weak, &det[0].1));
        assert!(i1 > 0.9 && i2 > 0.2 && i2 < 0.5);
        let p = prematch_bias(&tracks_for(&[Some(strong), Some(weak)]), &det, 1, &cfg);
        assert_eq!(p.bonus, BTreeSet::from([(0, 0)]));

        let off = TrackerConfig {
            enable_prematch: false,
            ..cfg
        };
        assert_eq!(prematch_bias(&tracks_for(&[Some(t)]), &det, 1, &off), Prematch::default());
    }

    #[test]
    fn prune_scope_is_per_camera() {
        let cfg = TrackerConfig::default();
        let tracks = vec![
            vec![Some(bx(0.0, 0.0, 10.0, 10.0)), None],
            vec![Some(bx(100.0, 0.0, 10.0, 10.0)), None],
            vec![None, Some(bx(0.0, 0.0, 10.0, 10.0))],
        ];
        let dets = vec![
            (0, bx(1.0, 0.0, 10.0, 10.0)),
            (0, bx(101.0, 0.0, 10.0, 10.0)),
            (1, bx(0.0, 1.0, 10.0, 10.0)),
        ];
        let p = prematch_bias(&tracks, &dets, 2, &cfg);
        assert_eq!(p.bonus, BTreeSet::from([(0, 0), (1, 1), (2, 2)]));
        assert_eq!(p.pruned, BTreeSet::from([(0, 1), (1, 0)]));
    }

    fn brute_force_max(values: &[Vec<f64>]) -> f64 {
        // exhaustive over injective maps from the smaller side
        let rows = values.len();
        let cols = values[0].len();
        let (small, large, get): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if rows <= cols {
            (rows, cols, Box::new(|s, l| values[s][l]))
        } else {
            (cols, rows, Box::new(|s, l| values[l][s]))
        };
        fn rec(i: usize, small: usize, large: usize, used: &mut Vec<bool>, get: &dyn Fn(usize, usize) -> f64) -> f64 {
            if i == small {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for l in 0..large {
                if !used[l] {
                    used[l] = true;
                    best = best.max(get(i, l) + rec(i + 1, small, large, used, get));
                    used[l] = false;
                }
            }
            best
        }
        rec(0, small, large, &mut vec![false; large], &*get)
    }

    proptest! {
        #[test]
        fn lap_matches_enumeration(rows in 1usize..=6, cols in 1usize..=6, seed in proptest::collection::vec(-1.0f64..1.0, 36)) {
            let values: Vec<Vec<f64>> = (0..rows).map(|r| (0..cols).map(|c| seed[r * 6 + c]).collect()).collect();
            let all = solve_lap_max(&values, f64::NEG_INFINITY);
            prop_assert_eq!(all.len(), rows.min(cols));
            let total: f64 = all.iter().map(|&(r, c)| values[r][c]).sum();
            prop_assert!((total - brute_force_max(&values)).abs() < 1e-9);
        }

        #[test]
        fn iou_symmetric(a in (0.0f64..50.0, 0.0f64..50.0, 0.1f64..30.0, 0.1f64..30.0),
                         b in (0.0f64..50.0, 0.0f64..50.0, 0.1f64..30.0, 0.1f64..30.0)) {
            let a = bx(a.0, a.1, a.2, a.3);
            let b = bx(b.0, b.1, b.2, b.3);
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&iou(&a, &b)));
        }
    }
}
