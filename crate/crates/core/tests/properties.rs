use std::collections::BTreeSet;
use std::io::Cursor;
use std::path::Path;

use ndarray::Array2;
use proptest::prelude::*;
use ptal_core::io::{parse_jsonl, to_jsonl, ProposalRow, PseudoLabelRow};
use ptal_core::losses::{
    act_focal_loss, background_seeds, bg_loss, enhanced_act_loss, enhanced_bg_loss, sample_pseudo_labels,
    RadiusMode, SampledPositives,
};
use ptal_core::metrics::{
    average_precision, tiou, ApInterpolation, GtInstance, RankedDetection,
};
use ptal_core::postprocess::{fuse_scores, generate_proposals, segment_candidates, temporal_nms, ProposalConfig};
use ptal_core::pseudolabel::{generate_pseudo_labels, RefinementConfig, VideoProposals};
use ptal_core::{
    derive_video_labels, ClassId, Interval, PointAnnotation, Proposal, PseudoLabel, Pyramid, ScoreSequence,
    VideoRecord,
};

fn scores(t: usize, c: usize) -> impl Strategy<Value = ScoreSequence> {
    prop::collection::vec(0.0f64..=1.0, t * (c + 1))
        .prop_map(move |v| ScoreSequence::new(Array2::from_shape_vec((t, c + 1), v).unwrap()).unwrap())
}

fn proposal(c: usize) -> impl Strategy<Value = Proposal> {
    (0.0f64..100.0, 0.5f64..30.0, 0..c, 0.0f64..1.0)
        .prop_map(|(s, len, k, conf)| Proposal::new(s, s + len, ClassId(k), conf))
}

fn ranked(videos: usize) -> impl Strategy<Value = RankedDetection> {
    (0..videos, 0.0f64..50.0, 0.5f64..20.0, 0.01f64..1.0).prop_map(|(video, s, len, score)| RankedDetection {
        video,
        interval: Interval::new(s, s + len),
        score,
    })
}

fn gt_instance(videos: usize) -> impl Strategy<Value = GtInstance> {
    (0..videos, 0.0f64..50.0, 0.5f64..20.0).prop_map(|(video, s, len)| GtInstance {
        video,
        interval: Interval::new(s, s + len),
    })
}

proptest! {
    #[test]
    fn fusion_is_bounded(seq in (1usize..20, 1usize..5).prop_flat_map(|(t, c)| scores(t, c))) {
        let fused = fuse_scores(&seq);
        let c = seq.num_classes();
        for t in 0..seq.len() {
            let b = seq.values()[[t, c]];
            for k in 0..c {
                let p = seq.values()[[t, k]];
                prop_assert!(fused.values()[[t, k]] <= p.min(1.0 - b) + 1e-15);
            }
            prop_assert_eq!(fused.values()[[t, c]], b);
        }
    }

    #[test]
    fn segments_are_disjoint_sorted_maximal(track in prop::collection::vec(0.0f64..1.0, 1..60), thr in 0.05f64..0.95) {
        let segs = segment_candidates(ndarray::ArrayView1::from(&track), thr);
        for w in segs.windows(2) {
            prop_assert!(w[0].1 + 1 < w[1].0);
        }
        for &(s, e) in &segs {
            prop_assert!(s <= e);
            prop_assert!(track[s..=e].iter().all(|&v| v >= thr));
            prop_assert!(s == 0 || track[s - 1] < thr);
            prop_assert!(e + 1 == track.len() || track[e + 1] < thr);
        }
        let covered: usize = segs.iter().map(|(s, e)| e - s + 1).sum();
        prop_assert_eq!(covered, track.iter().filter(|&&v| v >= thr).count());
    }

    #[test]
    fn nms_is_idempotent_and_bounded(ps in prop::collection::vec(proposal(3), 0..40), thr in 0.1f64..=1.0) {
        let once = temporal_nms(&ps, thr);
        prop_assert_eq!(temporal_nms(&once, thr), once.clone());
        for (i, a) in once.iter().enumerate() {
            for b in &once[i + 1..] {
                if a.label == b.label {
                    prop_assert!(tiou(a.interval(), b.interval()) < thr);
                }
            }
        }
    }

    #[test]
    fn proposals_stay_inside_video(
        seq in (4usize..40, 1usize..4).prop_flat_map(|(t, c)| scores(t, c)),
    ) {
        let c = seq.num_classes();
        let video = vec![0.9; c];
        let out = generate_proposals(std::slice::from_ref(&seq), &video, 2, &ProposalConfig::default());
        for p in out {
            prop_assert!(p.start >= 0.0 && p.end <= seq.len() as f64 && p.start < p.end);
            prop_assert!(p.confidence >= 0.0);
        }
    }

    #[test]
    fn ap_ignores_score_scale(
        dets in prop::collection::vec(ranked(3), 0..12),
        gt in prop::collection::vec(gt_instance(3), 1..6),
        factor in 0.01f64..100.0,
        thr in 0.1f64..0.9,
    ) {
        let scaled: Vec<_> = dets.iter().map(|d| RankedDetection { score: d.score * factor, ..*d }).collect();
        prop_assert_eq!(
            average_precision(&dets, &gt, thr, ApInterpolation::AllPoints),
            average_precision(&scaled, &gt, thr, ApInterpolation::AllPoints)
        );
    }

    #[test]
    fn removing_a_false_positive_never_lowers_ap(
        dets in prop::collection::vec(ranked(2), 1..12),
        gt in prop::collection::vec(gt_instance(2), 1..5),
        thr in 0.1f64..0.9,
    ) {
        let mut ordered = dets.clone();
        ptal_core::metrics::sort_ranked(&mut ordered);
        let hits = ptal_core::metrics::match_detections(&ordered, &gt, thr);
        let before = average_precision(&dets, &gt, thr, ApInterpolation::AllPoints).unwrap();
        for (i, hit) in hits.iter().enumerate() {
            if !hit {
                let mut fewer = ordered.clone();
                fewer.remove(i);
                let after = average_precision(&fewer, &gt, thr, ApInterpolation::AllPoints).unwrap();
                prop_assert!(after >= before - 1e-12, "{} < {}", after, before);
            }
        }
    }

    #[test]
    fn refinement_ignores_proposal_order(
        length in 20usize..80,
        raw_points in prop::collection::vec((0usize..1000, 0usize..2), 1..6),
        raw_props in prop::collection::vec((0usize..1000, 1usize..20, 0usize..2), 0..15),
        perm_seed in any::<u64>(),
    ) {
        let points: Vec<_> = raw_points.iter().map(|&(e, k)| PointAnnotation::new(e % length, ClassId(k), 2)).collect();
        let mut proposals: Vec<_> = raw_props
            .iter()
            .enumerate()
            .map(|(i, &(s, d, k))| {
                let s = (s % length) as f64;
                Proposal::new(s, (s + d as f64).min(length as f64), ClassId(k), 0.01 + i as f64 * 0.013)
            })
            .collect();
        let config = RefinementConfig::default();
        let run = |ps: &[Proposal]| {
            generate_pseudo_labels(&[VideoProposals { length, points: &points, proposals: ps }], &config).unwrap()
        };
        let first = run(&proposals);
        let mut state = perm_seed;
        for i in (1..proposals.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            proposals.swap(i, (state >> 33) as usize % (i + 1));
        }
        let second = run(&proposals);
        prop_assert_eq!(&first, &second);
        for (p, l) in points.iter().zip(&first[0]) {
            let eps = p.epsilon as f64;
            prop_assert!(l.start <= eps && eps <= l.end && l.start < l.end);
            prop_assert_eq!(Some(l.label), p.class());
        }
    }

    #[test]
    fn video_labels_are_order_independent(
        raw in prop::collection::vec((0usize..50, 0usize..4), 0..10),
        rot in 0usize..10,
    ) {
        let points: Vec<_> = raw.iter().map(|&(e, k)| PointAnnotation::new(e, ClassId(k), 4)).collect();
        let video = |points: Vec<PointAnnotation>| VideoRecord {
            id: "v".into(),
            length: 50,
            num_classes: 4,
            features: None,
            points,
            ground_truth: None,
        };
        let mut rotated = points.clone();
        if !rotated.is_empty() {
            let k = rot % rotated.len();
            rotated.rotate_left(k);
        }
        let a = derive_video_labels(&video(points.clone()));
        prop_assert_eq!(&a, &derive_video_labels(&video(rotated)));
        let doubled: Vec<_> = points.iter().chain(&points).cloned().collect();
        prop_assert_eq!(&a, &derive_video_labels(&video(doubled)));
        for (k, &bit) in a.presence.iter().enumerate() {
            prop_assert_eq!(bit == 1, raw.iter().any(|&(_, c)| c == k));
        }
    }

    #[test]
    fn sampled_positions_respect_interval_and_radius(
        length in 8usize..300,
        raw in prop::collection::vec((0usize..1000, 0.0f64..20.0, 0.0f64..20.0), 1..8),
        radius in 0usize..4,
        levels in 0usize..4,
    ) {
        let labels: Vec<_> = raw
            .iter()
            .map(|&(p, l, r)| {
                let point = p % length;
                PseudoLabel {
                    point,
                    start: (point as f64 - l).max(0.0),
                    end: (point as f64 + r + 0.5).min(length as f64),
                    label: ClassId(0),
                }
            })
            .collect();
        let pyramid = Pyramid { sigma: 2, levels };
        let sampled = sample_pseudo_labels(&labels, pyramid, length, radius, RadiusMode::LevelGrid);
        let lengths = pyramid.lengths(length);
        for (l, positives) in sampled.levels.iter().enumerate() {
            let scale = pyramid.scale(l);
            for &(t, _) in positives {
                prop_assert!(t < lengths[l]);
                let owner = labels.iter().any(|pl| {
                    let center = (pl.point as f64 / scale + 0.5).floor();
                    (t as f64 - center).abs() <= radius as f64
                        && t as f64 >= pl.start / scale
                        && t as f64 <= pl.end / scale
                });
                prop_assert!(owner, "position {} on level {} has no owner", t, l);
            }
        }
    }

    #[test]
    fn enhanced_losses_reduce_to_base_on_one_level(
        seq in (2usize..16, 1usize..4).prop_flat_map(|(t, c)| scores(t, c)),
        picks in prop::collection::vec((0usize..16, 0usize..4), 0..5),
        gamma in 0.0f64..3.0,
    ) {
        let t = seq.len();
        let c = seq.num_classes();
        let mut points: Vec<PointAnnotation> = picks
            .iter()
            .map(|&(e, k)| PointAnnotation::new(e % t, ClassId(k % c), c))
            .collect();
        points.sort_by_key(|p| (p.epsilon, p.class()));
        points.dedup();
        let sampled = SampledPositives {
            levels: vec![points.iter().map(|p| (p.epsilon, p.class().unwrap())).collect()],
        };
        let levels = std::slice::from_ref(&seq);
        let (base_act, base_grad) = act_focal_loss(&seq, &points, gamma);
        let (enh_act, enh_grad) = enhanced_act_loss(levels, &sampled, gamma);
        prop_assert!((base_act - enh_act).abs() <= 1e-12);
        prop_assert!((&base_grad - &enh_grad[0]).iter().all(|d| d.abs() <= 1e-12));

        let excluded: BTreeSet<usize> = points.iter().map(|p| p.epsilon).collect();
        let seeds = background_seeds(&seq, 0.5, &excluded);
        let (base_bg, _) = bg_loss(&seq, &seeds, gamma);
        let (enh_bg, _) = enhanced_bg_loss(levels, &sampled, 0.5, gamma);
        prop_assert!((base_bg - enh_bg).abs() <= 1e-12);
    }

    #[test]
    fn zero_gamma_is_binary_cross_entropy(
        p in 0.001f64..0.999,
        rest in prop::collection::vec(0.001f64..0.999, 1..4),
    ) {
        let c = rest.len();
        let mut row = vec![p];
        row.extend(&rest[1..]);
        row.push(0.3);
        let seq = ScoreSequence::new(Array2::from_shape_vec((1, c + 1), row.clone()).unwrap()).unwrap();
        let point = PointAnnotation::new(0, ClassId(0), c);
        let (value, _) = act_focal_loss(&seq, &[point], 0.0);
        let want = -p.ln() - row[1..c].iter().map(|q| (1.0 - q).ln()).sum::<f64>();
        prop_assert!((value - want).abs() <= 1e-12, "{} vs {}", value, want);
    }

    #[test]
    fn rows_round_trip(ps in prop::collection::vec(proposal(4), 0..30)) {
        let rows: Vec<ProposalRow> = ps.iter().map(|p| ProposalRow::new("video_0001", p)).collect();
        let text = to_jsonl(&rows);
        let back: Vec<ProposalRow> = parse_jsonl(Cursor::new(text), Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &rows);
        let labels: Vec<PseudoLabelRow> = ps
            .iter()
            .map(|p| PseudoLabelRow::new("v", &PseudoLabel { point: 3, start: p.start, end: p.end, label: p.label }))
            .collect();
        let back: Vec<PseudoLabelRow> = parse_jsonl(Cursor::new(to_jsonl(&labels)), Path::new("mem")).unwrap();
        prop_assert_eq!(back, labels);
    }
}
