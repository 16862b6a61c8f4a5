//! Identity metrics (IDF1 / IDP / IDR) and CLEAR MOTA.
//!
//! Both work on a [`TrajectorySet`]: per identity, at most one position per
//! `(frame, view)` slot. Views are cameras (boxes, IoU matching) or the
//! ground plane (points, radius matching).

use std::collections::{BTreeMap, BTreeSet};

use crate::assign::{iou, solve_lap_max, solve_lap_min};
use crate::geometry::{BBox, GroundPoint};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum View {
    Camera(String),
    Ground,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Position {
    Box(BBox),
    Point(GroundPoint),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Matcher {
    /// Boxes match when IoU is at least the threshold.
    Iou(f64),
    /// Points match when their distance is at most the radius.
    Radius(f64),
}

impl Matcher {
    /// Match quality in `[0, 1]` when the pair matches.
    fn score(&self, a: &Position, b: &Position) -> Option<f64> {
        match (self, a, b) {
            (Matcher::Iou(th), Position::Box(x), Position::Box(y)) => {
                let v = iou(x, y);
                (v >= *th).then_some(v)
            }
            (Matcher::Radius(r), Position::Point(p), Position::Point(q)) => {
                let d = p.distance(q);
                (d <= *r).then(|| 1.0 - d / r)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectorySet {
    slots: BTreeMap<(i64, View), BTreeMap<u64, Position>>,
}

impl TrajectorySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `false` (and keeps the first entry) on a duplicate slot.
    pub fn insert(&mut self, identity: u64, frame: i64, view: View, pos: Position) -> bool {
        let slot = self.slots.entry((frame, view)).or_default();
        if slot.contains_key(&identity) {
            return false;
        }
        slot.insert(identity, pos);
        true
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn identities(&self) -> BTreeSet<u64> {
        self.slots.values().flat_map(|s| s.keys().copied()).collect()
    }

    /// Restrict to one kind of view.
    pub fn filter_views(&self, keep: impl Fn(&View) -> bool) -> TrajectorySet {
        TrajectorySet {
            slots: self
                .slots
                .iter()
                .filter(|((_, v), _)| keep(v))
                .map(|(k, s)| (k.clone(), s.clone()))
                .collect(),
        }
    }

    /// Apply an identity relabeling.
    pub fn relabel(&self, f: impl Fn(u64) -> u64) -> TrajectorySet {
        TrajectorySet {
            slots: self
                .slots
                .iter()
                .map(|(k, s)| (k.clone(), s.iter().map(|(id, p)| (f(*id), *p)).collect()))
                .collect(),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (i64, &View, u64, &Position)> {
        self.slots
            .iter()
            .flat_map(|((f, v), s)| s.iter().map(move |(id, p)| (*f, v, *id, p)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdMetrics {
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

impl IdMetrics {
    pub fn from_counts(idtp: u64, idfp: u64, idfn: u64) -> Self {
        if idtp + idfp + idfn == 0 {
            return IdMetrics { idf1: 1.0, idp: 1.0, idr: 1.0, idtp, idfp, idfn };
        }
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        IdMetrics {
            idf1: ratio(2 * idtp, 2 * idtp + idfp + idfn),
            idp: ratio(idtp, idtp + idfp),
            idr: ratio(idtp, idtp + idfn),
            idtp,
            idfp,
            idfn,
        }
    }

    /// `|IDF1 - harmonic_mean(IDP, IDR)|`.
    pub fn harmonic_residual(&self) -> f64 {
        let h = if self.idp + self.idr > 0.0 {
            2.0 * self.idp * self.idr / (self.idp + self.idr)
        } else {
            0.0
        };
        (self.idf1 - h).abs()
    }
}

/// Identity-level precision/recall under the optimal one-to-one mapping
/// between ground-truth and predicted identities.
pub fn id_metrics(gt: &TrajectorySet, pred: &TrajectorySet, matcher: Matcher) -> IdMetrics {
    let gt_ids: Vec<u64> = gt.identities().into_iter().collect();
    let pred_ids: Vec<u64> = pred.identities().into_iter().collect();
    let gi: BTreeMap<u64, usize> = gt_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let pi: BTreeMap<u64, usize> = pred_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let (g, p) = (gt_ids.len(), pred_ids.len());

    let mut gt_len = vec![0u64; g];
    let mut pred_len = vec![0u64; p];
    let mut matches = vec![vec![0u64; p]; g];
    for (key, slot) in &gt.slots {
        for id in slot.keys() {
            gt_len[gi[id]] += 1;
        }
        if let Some(pslot) = pred.slots.get(key) {
            for (gid, gp) in slot {
                for (pid, pp) in pslot {
                    if matcher.score(gp, pp).is_some() {
                        matches[gi[gid]][pi[pid]] += 1;
                    }
                }
            }
        }
    }
    for slot in pred.slots.values() {
        for id in slot.keys() {
            pred_len[pi[id]] += 1;
        }
    }
    let total_gt: u64 = gt_len.iter().sum();
    let total_pred: u64 = pred_len.iter().sum();
    if g == 0 || p == 0 {
        return IdMetrics::from_counts(0, total_pred, total_gt);
    }

    // (g + p) square: real block, gt->dummy diagonal, dummy->pred diagonal, dummy block of zeros
    let n = g + p;
    let forbidden = (total_gt + total_pred + 1) as f64 * 4.0;
    let mut cost = vec![vec![0.0; n]; n];
    for i in 0..g {
        for j in 0..p {
            cost[i][j] = (gt_len[i] + pred_len[j] - 2 * matches[i][j]) as f64;
        }
        for k in 0..g {
            cost[i][p + k] = if k == i { gt_len[i] as f64 } else { forbidden };
        }
    }
    for j in 0..p {
        for k in 0..p {
            cost[g + j][k] = if k == j { pred_len[j] as f64 } else { forbidden };
        }
    }
    let idtp: u64 = solve_lap_min(&cost)
        .into_iter()
        .filter(|&(r, c)| r < g && c < p)
        .map(|(r, c)| matches[r][c])
        .sum();
    IdMetrics::from_counts(idtp, total_pred - idtp, total_gt - idtp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotaReport {
    pub mota: f64,
    pub num_gt: u64,
    pub false_negatives: u64,
    pub false_positives: u64,
    pub id_switches: u64,
    pub matches: u64,
}

/// CLEAR MOTA with persistent correspondences: last frame's pairs are kept
/// while they still match, the rest is assigned by maximum-quality LAP.
/// With no ground truth the denominator is taken as 1.
pub fn clear_mota(gt: &TrajectorySet, pred: &TrajectorySet, matcher: Matcher) -> MotaReport {
    let mut last: BTreeMap<(View, u64), u64> = BTreeMap::new();
    let empty = BTreeMap::new();
    let keys: BTreeSet<&(i64, View)> = gt.slots.keys().chain(pred.slots.keys()).collect();
    let (mut num_gt, mut fneg, mut fpos, mut idsw, mut nmatch) = (0u64, 0u64, 0u64, 0u64, 0u64);

    for key in keys {
        let view = &key.1;
        let gslot = gt.slots.get(key).unwrap_or(&empty);
        let pslot = pred.slots.get(key).unwrap_or(&empty);
        num_gt += gslot.len() as u64;

        let mut pairs: Vec<(u64, u64)> = Vec::new();
        let mut used_g = BTreeSet::new();
        let mut used_p = BTreeSet::new();
        for (gid, gp) in gslot {
            if let Some(pid) = last.get(&(view.clone(), *gid)) {
                if let Some(pp) = pslot.get(pid) {
                    if !used_p.contains(pid) && matcher.score(gp, pp).is_some() {
                        pairs.push((*gid, *pid));
                        used_g.insert(*gid);
                        used_p.insert(*pid);
                    }
                }
            }
        }
        let rest_g: Vec<(&u64, &Position)> = gslot.iter().filter(|(g, _)| !used_g.contains(*g)).collect();
        let rest_p: Vec<(&u64, &Position)> = pslot.iter().filter(|(p, _)| !used_p.contains(*p)).collect();
        if !rest_g.is_empty() && !rest_p.is_empty() {
            // cardinality first, then match quality
            let k = (rest_g.len().min(rest_p.len()) + 1) as f64;
            let values: Vec<Vec<f64>> = rest_g
                .iter()
                .map(|(_, gp)| {
                    rest_p
                        .iter()
                        .map(|(_, pp)| matcher.score(gp, pp).map_or(0.0, |s| k + s))
                        .collect()
                })
                .collect();
            for (r, c) in solve_lap_max(&values, 0.0) {
                pairs.push((*rest_g[r].0, *rest_p[c].0));
            }
        }

        for &(gid, pid) in &pairs {
            let prev = last.insert((view.clone(), gid), pid);
            if matches!(prev, Some(old) if old != pid) {
                idsw += 1;
            }
        }
        nmatch += pairs.len() as u64;
        fneg += gslot.len() as u64 - pairs.len() as u64;
        fpos += pslot.len() as u64 - pairs.len() as u64;
    }
    MotaReport::from_counts(num_gt, fneg, fpos, idsw, nmatch)
}

impl MotaReport {
    pub fn from_counts(num_gt: u64, false_negatives: u64, false_positives: u64, id_switches: u64, matches: u64) -> Self {
        MotaReport {
            mota: 1.0 - (false_negatives + false_positives + id_switches) as f64 / num_gt.max(1) as f64,
            num_gt,
            false_negatives,
            false_positives,
            id_switches,
            matches,
        }
    }
}

/// Image-plane and ground-plane scores of one scene (or a sum of scenes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneReport {
    pub image: IdMetrics,
    pub image_mota: MotaReport,
    pub ground: IdMetrics,
    pub ground_mota: MotaReport,
}

impl SceneReport {
    /// Pool counts over scenes.
    pub fn aggregate(reports: &[SceneReport]) -> SceneReport {
        let ids = |f: fn(&SceneReport) -> &IdMetrics| {
            let (tp, fp, fn_) = reports.iter().map(f).fold((0, 0, 0), |acc, m| {
                (acc.0 + m.idtp, acc.1 + m.idfp, acc.2 + m.idfn)
            });
            IdMetrics::from_counts(tp, fp, fn_)
        };
        let mota = |f: fn(&SceneReport) -> &MotaReport| {
            let sum = |g: fn(&MotaReport) -> u64| reports.iter().map(|r| g(f(r))).sum::<u64>();
            MotaReport::from_counts(
                sum(|m| m.num_gt),
                sum(|m| m.false_negatives),
                sum(|m| m.false_positives),
                sum(|m| m.id_switches),
                sum(|m| m.matches),
            )
        };
        SceneReport {
            image: ids(|r| &r.image),
            image_mota: mota(|r| &r.image_mota),
            ground: ids(|r| &r.ground),
            ground_mota: mota(|r| &r.ground_mota),
        }
    }
}

/// Score camera views with IoU matching and the ground view with a radius.
pub fn evaluate(gt: &TrajectorySet, pred: &TrajectorySet, iou_threshold: f64, radius: f64) -> SceneReport {
    let is_cam = |v: &View| matches!(v, View::Camera(_));
    let is_ground = |v: &View| *v == View::Ground;
    let (gi, pi) = (gt.filter_views(is_cam), pred.filter_views(is_cam));
    let (gg, pg) = (gt.filter_views(is_ground), pred.filter_views(is_ground));
    SceneReport {
        image: id_metrics(&gi, &pi, Matcher::Iou(iou_threshold)),
        image_mota: clear_mota(&gi, &pi, Matcher::Iou(iou_threshold)),
        ground: id_metrics(&gg, &pg, Matcher::Radius(radius)),
        ground_mota: clear_mota(&gg, &pg, Matcher::Radius(radius)),
    }
}
