use proptest::prelude::*;
use vql3d_core::anchor::{assemble_track, AnchorGrid, TrackAssembly};
use vql3d_core::data::{
    compute_stats, generate_synthetic, parse_annotations, parse_head_document, parse_predictions, response_tracks,
    sep_distance, serialize_annotations, serialize_head_document, serialize_predictions, DataError, GeneratedData,
    HeadDocument, Header, NoiseConfig, SequenceAnnotation, SynthConfig, ANNOTATIONS_KIND, DEFAULT_BINS,
};
use vql3d_core::geom::Workspace;
use vql3d_core::metrics::{score, EvalConfig, MetricReport};

fn small(num_sequences: usize) -> SynthConfig {
    SynthConfig {
        num_sequences,
        ..SynthConfig::default()
    }
}

/// Every structural rule, restated independently of the constructor.
fn check_annotation(a: &SequenceAnnotation, config: &SynthConfig, sampled_sep: usize) {
    assert!((config.min_frames..=config.max_frames).contains(&a.frames()));
    let segments = a.segments();
    assert!((config.min_segments..=config.max_segments).contains(&segments.len()));
    for pair in segments.windows(2) {
        assert!(pair[0].interval().end() < pair[1].interval().start());
    }
    for s in segments {
        assert_eq!(s.boxes().len(), s.interval().end() - s.interval().start() + 1);
        assert!(s.interval().end() < a.frames());
        for b in s.boxes() {
            for c in b.corners() {
                let inside =
                    (0..3).all(|k| c[k] >= config.workspace.min[k] - 1e-9 && c[k] <= config.workspace.max[k] + 1e-9);
                assert!(inside, "corner {c:?} of {}", a.sequence_id());
            }
            let size = b.size();
            assert!((0..3).all(|k| (config.min_size..=config.max_size).contains(&size[k])));
        }
    }
    assert_eq!(a.most_recent_frame(), segments.last().unwrap().interval().end());
    assert_eq!(sep_distance(a), a.frames() - 1 - a.most_recent_frame());
    assert_eq!(sep_distance(a), sampled_sep);
    assert!(sampled_sep <= config.max_sep);
    let rebuilt = SequenceAnnotation::new(
        a.sequence_id(),
        a.fps(),
        a.frames(),
        a.query().clone(),
        segments.to_vec(),
        a.most_recent_frame(),
        a.modalities(),
    );
    assert_eq!(rebuilt.as_ref(), Ok(a));
}

#[test]
fn generated_annotations_hold_invariants_over_many_seeds() {
    let config = small(2);
    for seed in 0..1000 {
        let g = generate_synthetic(seed, &config).unwrap();
        assert_eq!(g.annotations.len(), 2);
        for (a, sep) in g.annotations.iter().zip(&g.sep_distances) {
            check_annotation(a, &config, *sep);
        }
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let config = SynthConfig {
        noise: NoiseConfig {
            center_jitter: 0.1,
            size_jitter: 0.1,
            angle_jitter: 0.05,
            temporal_shift: 3,
        },
        head_grid: Some([8, 8, 8]),
        ..small(6)
    };
    let a = generate_synthetic(17, &config).unwrap();
    let b = generate_synthetic(17, &config).unwrap();
    assert_eq!(
        serialize_annotations(&a.annotations, None),
        serialize_annotations(&b.annotations, None)
    );
    assert_eq!(
        serialize_predictions(&a.degraded, None),
        serialize_predictions(&b.degraded, None)
    );
    assert_eq!(a.heads, b.heads);
    let c = generate_synthetic(18, &config).unwrap();
    assert_ne!(a.annotations, c.annotations);
}

#[test]
fn zero_noise_degraded_equals_oracle_and_ground_truth() {
    let g = generate_synthetic(3, &small(10)).unwrap();
    assert_eq!(g.degraded, g.oracle);
    for (o, gt) in g.oracle.iter().zip(response_tracks(&g.annotations)) {
        assert_eq!(o.interval(), gt.interval());
        assert_eq!(o.boxes(), gt.boxes());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn documents_round_trip(seed in any::<u64>(), shift in -5i64..5, jitter in 0.0..0.3f64) {
        let config = SynthConfig {
            noise: NoiseConfig { center_jitter: jitter, size_jitter: jitter, angle_jitter: jitter, temporal_shift: shift },
            head_grid: Some([6, 5, 4]),
            ..small(3)
        };
        let g = generate_synthetic(seed, &config).unwrap();
        let header = Header::new(ANNOTATIONS_KIND, Some(serde_json::json!({"seed": seed})));
        let text = serialize_annotations(&g.annotations, Some(&header));
        prop_assert_eq!(&parse_annotations(&text).unwrap(), &g.annotations);
        prop_assert_eq!(serialize_annotations(&parse_annotations(&text).unwrap(), Some(&header)), text);
        let preds = serialize_predictions(&g.degraded, None);
        prop_assert_eq!(&parse_predictions(&preds).unwrap(), &g.degraded);
        let doc = HeadDocument {
            header: Some(HeadDocument::grid_header(&config.workspace, [6, 5, 4], None)),
            records: g.heads.clone().unwrap(),
        };
        let head_text = serialize_head_document(&doc);
        prop_assert_eq!(&parse_head_document(&head_text).unwrap(), &doc);
    }
}

fn report(g: &GeneratedData, preds: &[vql3d_core::metrics::ResponseTrack]) -> MetricReport {
    score(preds, &response_tracks(&g.annotations), &EvalConfig::default()).unwrap()
}

#[test]
fn oracle_predictions_score_perfectly() {
    for seed in [0, 1, 99] {
        let g = generate_synthetic(seed, &small(25)).unwrap();
        let r = report(&g, &g.oracle);
        assert_eq!(r.tap.ap, vec![1.0; 4]);
        assert_eq!(r.stap.ap, vec![1.0; 5]);
        assert_eq!((r.success, r.recovery), (100.0, 100.0));
    }
}

#[test]
fn encoded_heads_decode_back_to_ground_truth() {
    let config = SynthConfig {
        head_grid: Some([16, 16, 16]),
        ..small(8)
    };
    let g = generate_synthetic(5, &config).unwrap();
    let grid = AnchorGrid::new(config.workspace, [16, 16, 16]).unwrap();
    let mut tracks = Vec::new();
    for (record, gt) in g.heads.as_ref().unwrap().iter().zip(response_tracks(&g.annotations)) {
        let head = record.to_head_output(grid.len()).unwrap();
        let track = assemble_track(&record.sequence_id, &grid, &head, &TrackAssembly::default())
            .unwrap()
            .unwrap();
        assert_eq!(track.interval(), gt.interval());
        for (a, b) in track.boxes().iter().zip(gt.boxes()) {
            for (x, y) in a.to_array().iter().zip(b.to_array()) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
        tracks.push(track);
    }
    let r = report(&g, &tracks);
    assert_eq!(
        (r.tap.mean, r.stap.mean, r.success, r.recovery),
        (1.0, 1.0, 100.0, 100.0)
    );
}

fn sweep(values: &[f64], knob: impl Fn(f64) -> NoiseConfig) -> Vec<MetricReport> {
    values
        .iter()
        .map(|v| {
            let g = generate_synthetic(
                2024,
                &SynthConfig {
                    noise: knob(*v),
                    ..small(30)
                },
            )
            .unwrap();
            report(&g, &g.degraded)
        })
        .collect()
}

fn assert_non_increasing(reports: &[MetricReport], knob: &str) {
    for w in reports.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        assert!(b.tap.mean <= a.tap.mean, "{knob}: tAP {} -> {}", a.tap.mean, b.tap.mean);
        assert!(
            b.stap.mean <= a.stap.mean,
            "{knob}: stAP {} -> {}",
            a.stap.mean,
            b.stap.mean
        );
        assert!(b.success <= a.success, "{knob}: Succ {} -> {}", a.success, b.success);
        assert!(b.recovery <= a.recovery, "{knob}: Rec {} -> {}", a.recovery, b.recovery);
    }
    let (first, last) = (&reports[0], reports.last().unwrap());
    assert!(
        last.stap.mean < first.stap.mean || last.tap.mean < first.tap.mean,
        "{knob} had no effect"
    );
}

#[test]
fn center_jitter_sweep_is_monotone() {
    let values: Vec<f64> = (0..=10).map(|i| 0.05 * i as f64).collect();
    assert_non_increasing(
        &sweep(&values, |v| NoiseConfig {
            center_jitter: v,
            ..NoiseConfig::default()
        }),
        "center",
    );
}

#[test]
fn temporal_shift_sweep_is_monotone() {
    let values: Vec<f64> = (0..=20).map(f64::from).collect();
    let reports = sweep(&values, |v| NoiseConfig {
        temporal_shift: v as i64,
        ..NoiseConfig::default()
    });
    assert_non_increasing(&reports, "shift");
}

#[test]
fn size_jitter_sweep_is_monotone() {
    let values: Vec<f64> = (0..=8).map(|i| 0.05 * i as f64).collect();
    assert_non_increasing(
        &sweep(&values, |v| NoiseConfig {
            size_jitter: v,
            ..NoiseConfig::default()
        }),
        "size",
    );
}

#[test]
fn small_angle_jitter_sweep_is_monotone() {
    let values: Vec<f64> = (0..=6).map(|i| 0.02 * i as f64).collect();
    assert_non_increasing(
        &sweep(&values, |v| NoiseConfig {
            angle_jitter: v,
            ..NoiseConfig::default()
        }),
        "angle",
    );
}

#[test]
fn shift_of_five_keeps_overlap_exact_and_cuts_tiou() {
    let g = generate_synthetic(
        8,
        &SynthConfig {
            noise: NoiseConfig {
                temporal_shift: 5,
                ..NoiseConfig::default()
            },
            ..small(12)
        },
    )
    .unwrap();
    let r = report(&g, &g.degraded);
    let gts = response_tracks(&g.annotations);
    for (q, (pred, gt)) in r.per_query.iter().zip(g.degraded.iter().zip(&gts)) {
        let overlap = pred.interval().overlap(&gt.interval());
        for (t, b) in gt.frames() {
            if let Some(p) = pred.box_at(t) {
                assert_eq!(p, b);
            }
        }
        assert!((q.stiou - overlap as f64 / gt.interval().len() as f64).abs() <= 1e-12);
        if pred.interval() != gt.interval() {
            assert!(q.tiou < 1.0);
        }
    }
    assert!(r.per_query.iter().any(|q| q.tiou < 1.0));
}

#[test]
fn stats_support_follows_the_generator() {
    let config = small(60);
    let g = generate_synthetic(77, &config).unwrap();
    let stats = compute_stats(&g.annotations, &config.workspace, DEFAULT_BINS).unwrap();
    assert_eq!(stats.centers_outside_workspace, 0);
    let (lo, hi) = stats.histogram("sep_distance").unwrap().support().unwrap();
    assert!(lo >= 0.0 && hi <= 100.0);
    let ws = Workspace::default();
    for (k, name) in ["center_x", "center_y", "center_z"].iter().enumerate() {
        let (lo, hi) = stats.histogram(name).unwrap().support().unwrap();
        assert!(lo >= ws.min[k] && hi <= ws.max[k], "{name}: [{lo}, {hi}]");
    }
    let boxes: usize = g
        .annotations
        .iter()
        .flat_map(|a| a.segments())
        .map(|s| s.boxes().len())
        .sum();
    for h in &stats.histograms {
        let expected = match h.name.as_str() {
            "sep_distance" | "sequence_frames" => 60,
            "segment_start" | "segment_end" => g.annotations.iter().map(|a| a.segments().len()).sum(),
            _ => boxes,
        };
        assert_eq!(h.total() as usize, expected, "{}", h.name);
    }
    let single = compute_stats(&g.annotations[..1], &ws, DEFAULT_BINS).unwrap();
    for name in ["sep_distance", "sequence_frames"] {
        assert_eq!(single.histogram(name).unwrap().counts, vec![1]);
    }
    assert_eq!(compute_stats(&[], &ws, DEFAULT_BINS), Err(DataError::Empty));
}

#[test]
fn validation_reports_every_bad_record() {
    let g = generate_synthetic(1, &small(3)).unwrap();
    let text = serialize_annotations(&g.annotations, None);
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    lines[0] = lines[0].replacen("\"fps\":20.0", "\"fps\":-1.0", 1);
    let mut bad: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    bad["most_recent_frame"] = serde_json::json!(0);
    lines[2] = bad.to_string();
    match parse_annotations(&lines.join("\n")) {
        Err(DataError::Validation(issues)) => {
            let located: Vec<usize> = issues.iter().map(|i| i.line).collect();
            assert_eq!(located, vec![1, 3]);
        }
        other => panic!("expected validation issues, got {other:?}"),
    }
    assert!(matches!(
        parse_annotations("{not json"),
        Err(DataError::Syntax { line: 1, .. })
    ));
}
