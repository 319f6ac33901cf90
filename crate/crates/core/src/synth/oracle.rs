//! Reference implementations for randomized agreement tests. These are
//! deliberately naive and share no logic with the main code paths.

use crate::types::{ClassId, GtInterval, PointAnnotation, Proposal, PseudoLabel};

fn one_hot_class(label: &[u8]) -> Option<usize> {
    let ones: Vec<usize> = (0..label.len()).filter(|&i| label[i] == 1).collect();
    let others = label.iter().filter(|&&v| v != 0 && v != 1).count();
    if ones.len() == 1 && others == 0 {
        Some(ones[0])
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleVideo<'a> {
    pub length: usize,
    pub points: &'a [PointAnnotation],
    pub proposals: &'a [Proposal],
}

/// An entry of the working set: owning (video, point), interval, class and
/// confidence.
#[derive(Debug, Clone, Copy)]
struct Entry {
    video: usize,
    point: usize,
    s: f64,
    e: f64,
    class: usize,
    cs: f64,
}

fn contains(s: f64, e: f64, class: usize, point: &PointAnnotation) -> bool {
    let c = one_hot_class(&point.label);
    let t = point.epsilon as f64;
    c == Some(class) && s <= t && t <= e
}

/// Index of the best candidate: highest confidence, then smaller start,
/// then smaller end. Linear scan.
fn argmax(cands: &[(f64, f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..cands.len() {
        let (cs, s, e) = cands[i];
        let better = match best {
            None => true,
            Some(b) => {
                let (bcs, bs, be) = cands[b];
                cs > bcs || (cs == bcs && (s < bs || (s == bs && e < be)))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Step-by-step refinement over the whole dataset: collect singleton
/// proposals, compute per-class mean durations once, then resolve every
/// point in order. Working-set entries belong to the point that created
/// them.
pub fn oracle_pseudolabels(videos: &[OracleVideo<'_>], default_duration: f64) -> Vec<Vec<PseudoLabel>> {
    let mut num_classes = 0;
    for v in videos {
        for p in v.points {
            num_classes = num_classes.max(p.label.len());
        }
    }

    let mut set: Vec<Entry> = Vec::new();
    for (vi, v) in videos.iter().enumerate() {
        for prop in v.proposals {
            let mut owners = Vec::new();
            for (pi, p) in v.points.iter().enumerate() {
                if contains(prop.start, prop.end, prop.label.0, p) {
                    owners.push(pi);
                }
            }
            if owners.len() == 1 {
                set.push(Entry {
                    video: vi,
                    point: owners[0],
                    s: prop.start,
                    e: prop.end,
                    class: prop.label.0,
                    cs: prop.confidence,
                });
            }
        }
    }

    let mut mean = vec![None; num_classes];
    let mut all_sum = 0.0;
    let mut all_n = 0usize;
    for (c, slot) in mean.iter_mut().enumerate() {
        let mut sum = 0.0;
        let mut n = 0usize;
        for en in &set {
            if en.class == c {
                sum += en.e - en.s;
                n += 1;
            }
        }
        all_sum += sum;
        all_n += n;
        if n > 0 {
            *slot = Some(sum / n as f64);
        }
    }
    let global = if all_n > 0 { Some(all_sum / all_n as f64) } else { None };

    for (vi, v) in videos.iter().enumerate() {
        for (pi, p) in v.points.iter().enumerate() {
            let class = one_hot_class(&p.label).expect("one-hot labels");
            let d = match (mean[class], global) {
                (Some(m), _) => m,
                (None, Some(g)) => g,
                (None, None) => default_duration,
            };
            let delta = d / 2.0;
            let eps = p.epsilon as f64;
            let mine: Vec<usize> = (0..set.len())
                .filter(|&k| set[k].video == vi && set[k].point == pi)
                .collect();
            if mine.is_empty() {
                let tau: Vec<&Proposal> = v
                    .proposals
                    .iter()
                    .filter(|q| contains(q.start, q.end, q.label.0, p))
                    .collect();
                let cands: Vec<(f64, f64, f64)> = tau.iter().map(|q| (q.confidence, q.start, q.end)).collect();
                let entry = match argmax(&cands) {
                    Some(k) => Entry {
                        video: vi,
                        point: pi,
                        s: if tau[k].start > eps - delta { tau[k].start } else { eps - delta },
                        e: if tau[k].end < eps + delta { tau[k].end } else { eps + delta },
                        class,
                        cs: tau[k].confidence,
                    },
                    None => Entry {
                        video: vi,
                        point: pi,
                        s: if eps - delta < 0.0 { 0.0 } else { eps - delta },
                        e: if eps + delta > v.length as f64 { v.length as f64 } else { eps + delta },
                        class,
                        cs: 0.0,
                    },
                };
                set.push(entry);
            } else {
                let cands: Vec<(f64, f64, f64)> = mine.iter().map(|&k| (set[k].cs, set[k].s, set[k].e)).collect();
                let keep = set[mine[argmax(&cands).expect("non-empty")]];
                let mut rest = Vec::new();
                for (k, en) in set.iter().enumerate() {
                    if !mine.contains(&k) {
                        rest.push(*en);
                    }
                }
                rest.push(keep);
                set = rest;
            }
        }
    }

    videos
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            (0..v.points.len())
                .map(|pi| {
                    let en = set
                        .iter()
                        .find(|en| en.video == vi && en.point == pi)
                        .expect("every point resolved");
                    PseudoLabel {
                        point: v.points[pi].epsilon,
                        start: en.s,
                        end: en.e,
                        label: ClassId(en.class),
                    }
                })
                .collect()
        })
        .collect()
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let lo = if a.0 > b.0 { a.0 } else { b.0 };
    let hi = if a.1 < b.1 { a.1 } else { b.1 };
    let inter = if hi > lo { hi - lo } else { 0.0 };
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// `(video, start, end, score)`
pub type OracleDetection = (usize, f64, f64, f64);
/// `(video, start, end)`
pub type OracleGt = (usize, f64, f64);

/// All-points AP by explicit ranking and greedy matching. `None` when both
/// lists are empty.
pub fn oracle_ap(dets: &[OracleDetection], gt: &[OracleGt], threshold: f64) -> Option<f64> {
    if gt.is_empty() {
        return if dets.is_empty() { None } else { Some(0.0) };
    }
    // Selection sort: score desc, start asc, end asc, video asc.
    let mut remaining: Vec<OracleDetection> = dets.to_vec();
    let mut ranked = Vec::new();
    while !remaining.is_empty() {
        let mut b = 0;
        for i in 1..remaining.len() {
            let (v, s, e, sc) = remaining[i];
            let (bv, bs, be, bsc) = remaining[b];
            let before = sc > bsc
                || (sc == bsc && (s < bs || (s == bs && (e < be || (e == be && v < bv)))));
            if before {
                b = i;
            }
        }
        ranked.push(remaining.remove(b));
    }

    let mut used = vec![false; gt.len()];
    let mut tp = 0.0;
    let mut sum = 0.0;
    for (r, &(v, s, e, _)) in ranked.iter().enumerate() {
        let mut pick: Option<usize> = None;
        let mut pick_iou = -1.0;
        for g in 0..gt.len() {
            if used[g] || gt[g].0 != v {
                continue;
            }
            let o = overlap((s, e), (gt[g].1, gt[g].2));
            if o >= threshold && o > pick_iou {
                pick = Some(g);
                pick_iou = o;
            }
        }
        if let Some(g) = pick {
            used[g] = true;
            tp += 1.0;
            sum += tp / (r as f64 + 1.0);
        }
    }
    Some(sum / gt.len() as f64)
}

/// Per-class APs (rows) over thresholds (columns), mAP per threshold over
/// classes with ground truth, and its mean.
pub fn oracle_evaluate(
    detections: &[Vec<Proposal>],
    ground_truth: &[Vec<GtInterval>],
    num_classes: usize,
    thresholds: &[f64],
) -> (Vec<Vec<Option<f64>>>, Vec<f64>, f64) {
    let mut table = Vec::new();
    let mut sums = vec![0.0; thresholds.len()];
    let mut counted = 0;
    for c in 0..num_classes {
        let mut d = Vec::new();
        for (v, list) in detections.iter().enumerate() {
            for p in list {
                if p.label.0 == c {
                    d.push((v, p.start, p.end, p.confidence));
                }
            }
        }
        let mut g = Vec::new();
        for (v, list) in ground_truth.iter().enumerate() {
            for x in list {
                if x.label.0 == c {
                    g.push((v, x.start, x.end));
                }
            }
        }
        let row: Vec<Option<f64>> = thresholds.iter().map(|&t| oracle_ap(&d, &g, t)).collect();
        if !g.is_empty() {
            counted += 1;
            for i in 0..thresholds.len() {
                sums[i] += row[i].unwrap_or(0.0);
            }
        }
        table.push(row);
    }
    let map: Vec<f64> = sums
        .iter()
        .map(|s| if counted > 0 { s / counted as f64 } else { 0.0 })
        .collect();
    let avg = if map.is_empty() {
        0.0
    } else {
        map.iter().sum::<f64>() / map.len() as f64
    };
    (table, map, avg)
}
