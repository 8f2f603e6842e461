use std::collections::BTreeSet;

use proptest::prelude::*;
use sievelab::analysis::prob_positive;
use sievelab::calibrate::{apply_calibrator, classwise_ece, Calibrator};
use sievelab::data::{subgroup_assign, CaseLabel, LesionTag, RoiAnnotation, RoiBox};
use sievelab::filter::{frame_distance, gaussian_mask, halving_ladder, lowpass, roi_scheme_filter, validate_ladder, Cutoff, FilterSpec, GrayImage, RoiScheme};
use sievelab::stats::ks_statistic;

fn image(h: usize, w: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0.0f64..4000.0, h * w).prop_map(move |px| GrayImage::new(h, w, 0.1, px).unwrap())
}

fn tag() -> impl Strategy<Value = LesionTag> {
    prop_oneof![
        Just(LesionTag::Microcalcification),
        Just(LesionTag::Mass),
        Just(LesionTag::Asymmetry),
        Just(LesionTag::ArchitecturalDistortion),
        Just(LesionTag::Occult),
    ]
}

fn label() -> impl Strategy<Value = CaseLabel> {
    prop_oneof![Just(CaseLabel::Malignant), Just(CaseLabel::Benign), Just(CaseLabel::Nonbiopsied)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_peaks_at_dc_and_decays_radially(h in 2usize..24, w in 2usize..24, d0 in 0.3f64..20.0) {
        let m = gaussian_mask(h, w, d0).unwrap();
        let (cr, cc) = m.center();
        prop_assert!((m.at(cr, cc) - 1.0).abs() < 1e-15);
        let mut bins: Vec<(f64, f64)> = (0..h * w)
            .map(|i| (frame_distance(h, w, i / w, i % w), m.values[i]))
            .collect();
        bins.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in bins.windows(2) {
            prop_assert!(pair[1].1 <= pair[0].1 + 1e-15);
        }
    }

    #[test]
    fn mask_is_symmetric_under_half_turn(h in 2usize..24, w in 2usize..24, d0 in 0.3f64..20.0) {
        let m = gaussian_mask(h, w, d0).unwrap();
        let (cr, cc) = m.center();
        for r in 0..h {
            for c in 0..w {
                let (rr, rc) = (2 * cr as isize - r as isize, 2 * cc as isize - c as isize);
                if (0..h as isize).contains(&rr) && (0..w as isize).contains(&rc) {
                    prop_assert!((m.at(r, c) - m.at(rr as usize, rc as usize)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn halving_ladders_are_valid(levels in 1usize..14) {
        let ladder = halving_ladder(levels);
        prop_assert!(validate_ladder(&ladder).is_ok());
        prop_assert_eq!(ladder[0].cutoff_cycles_per_mm, Cutoff::Unfiltered);
        for (i, spec) in ladder.iter().enumerate() {
            prop_assert_eq!(spec.severity_index, i);
        }
    }

    #[test]
    fn roi_schemes_tile_the_image(
        img in image(12, 10),
        boxes in prop::collection::vec((0u32..10, 0u32..12, 1u32..6, 1u32..6), 0..4),
        cutoff in 0.5f64..20.0,
    ) {
        let boxes: Vec<RoiBox> = boxes
            .into_iter()
            .map(|(x, y, w, h)| RoiBox { x: x.min(10 - w.min(10)), y: y.min(12 - h.min(12)), w: w.min(10), h: h.min(12) })
            .collect();
        let rois = RoiAnnotation { reader_id: "r".into(), image_id: "i".into(), boxes };
        let spec = FilterSpec { severity_index: 1, cutoff_cycles_per_mm: Cutoff::CyclesPerMm(cutoff) };
        let full = lowpass(&img, &spec).unwrap();
        prop_assert_eq!(&roi_scheme_filter(&img, &rois, RoiScheme::Full, &spec).unwrap(), &full);
        let inside = roi_scheme_filter(&img, &rois, RoiScheme::Interior, &spec).unwrap();
        let outside = roi_scheme_filter(&img, &rois, RoiScheme::Exterior, &spec).unwrap();
        for i in 0..img.pixels.len() {
            let (row, col) = (i / 10, i % 10);
            if rois.boxes.iter().any(|b| b.contains(row, col)) {
                prop_assert_eq!(inside.pixels[i], full.pixels[i]);
                prop_assert_eq!(outside.pixels[i], img.pixels[i]);
            } else {
                prop_assert_eq!(inside.pixels[i], img.pixels[i]);
                prop_assert_eq!(outside.pixels[i], full.pixels[i]);
            }
        }
    }

    #[test]
    fn calibrator_maps_into_open_unit_interval(
        w1 in -5.0f64..5.0, w2 in -5.0f64..5.0, b in -5.0f64..5.0, z in 1e-6f64..(1.0 - 1e-6),
    ) {
        let c = Calibrator { weights: [w1, w2], intercept: b, ..Calibrator::identity() };
        let p = apply_calibrator(&c, z);
        prop_assert!(p > 0.0 && p < 1.0, "{}", p);
    }

    #[test]
    fn calibrator_is_monotone_for_canonical_signs(
        w1 in 0.01f64..5.0, w2 in -5.0f64..-0.01, b in -3.0f64..3.0, z1 in 0.01f64..0.99, z2 in 0.01f64..0.99,
    ) {
        let c = Calibrator { weights: [w1, w2], intercept: b, ..Calibrator::identity() };
        let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
        prop_assert!(apply_calibrator(&c, lo) <= apply_calibrator(&c, hi));
    }

    #[test]
    fn ece_ignores_pair_order(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 2..80),
        seed in any::<u64>(),
    ) {
        let (scores, labels): (Vec<f64>, Vec<bool>) = pairs.iter().cloned().unzip();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let ps: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        let pl: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
        let a = classwise_ece(&scores, &labels, 15).unwrap();
        let b = classwise_ece(&ps, &pl, 15).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn ks_is_symmetric_and_rank_based(
        a in prop::collection::vec(-50.0f64..50.0, 1..60),
        b in prop::collection::vec(-50.0f64..50.0, 1..60),
    ) {
        let d = ks_statistic(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_statistic(&b, &a).unwrap());
        let f = |x: &f64| (x / 10.0).exp() * 3.0 + 1.0;
        let ta: Vec<f64> = a.iter().map(f).collect();
        let tb: Vec<f64> = b.iter().map(f).collect();
        prop_assert!((d - ks_statistic(&ta, &tb).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn prob_positive_is_a_probability(mean in -20.0f64..20.0, std in 0.0f64..10.0) {
        let p = prob_positive(mean, std);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(prob_positive(0.0, std), 0.5);
    }

    #[test]
    fn subgroup_assignment_is_deterministic_and_consistent(
        tags in prop::collection::btree_set(tag(), 0..4),
        label in label(),
    ) {
        let first = subgroup_assign(&tags, label);
        prop_assert_eq!(&first, &subgroup_assign(&tags, label));
        let occult_mixed = tags.contains(&LesionTag::Occult) && tags.len() > 1;
        let valid = match label {
            CaseLabel::Nonbiopsied => tags.is_empty(),
            _ => !tags.is_empty() && !occult_mixed,
        };
        prop_assert_eq!(first.is_ok(), valid);
    }
}

#[test]
fn every_visible_tag_combination_has_a_subgroup() {
    let visible = [LesionTag::Microcalcification, LesionTag::Mass, LesionTag::Asymmetry, LesionTag::ArchitecturalDistortion];
    for mask in 1u32..16 {
        let tags: BTreeSet<LesionTag> = (0..4).filter(|i| mask & (1 << i) != 0).map(|i| visible[i]).collect();
        for label in [CaseLabel::Malignant, CaseLabel::Benign] {
            assert!(subgroup_assign(&tags, label).is_ok(), "{tags:?}");
        }
    }
}

mod round_trip {
    use proptest::prelude::*;
    use sievelab::data::{load_cases, load_image_meta, load_rois, read_prediction_records, write_cases, write_predictions, ImageMeta, PredictionRecord, ReaderKind, RoiAnnotation, RoiBox, View};
    use sievelab::io::write_jsonl;
    use sievelab::synth::synthetic_cases;

    fn record() -> impl Strategy<Value = PredictionRecord> {
        (0usize..5, any::<bool>(), 0usize..50, 0usize..9, 0.0f64..=1.0).prop_map(|(r, human, c, s, score)| PredictionRecord {
            reader_id: format!("reader-{r}"),
            reader_kind: if human { ReaderKind::Human } else { ReaderKind::Machine },
            case_id: format!("case-{c:05}"),
            severity_index: s,
            score: if human { score.round() } else { score },
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prediction_files_are_canonical(records in prop::collection::vec(record(), 0..40)) {
            let dir = tempfile::tempdir().unwrap();
            let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
            write_predictions(&a, &records).unwrap();
            let loaded = read_prediction_records(&a).unwrap();
            prop_assert_eq!(&loaded, &records);
            write_predictions(&b, &loaded).unwrap();
            prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        }

        #[test]
        fn case_files_are_canonical(n in 1usize..60, groups in 1usize..6, seed in any::<u64>()) {
            let dir = tempfile::tempdir().unwrap();
            let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
            let cases = synthetic_cases(n, groups, seed);
            write_cases(&a, &cases).unwrap();
            let loaded = load_cases(&a).unwrap();
            prop_assert_eq!(&loaded, &cases);
            write_cases(&b, &loaded).unwrap();
            prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        }
    }

    #[test]
    fn roi_and_image_files_are_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let rois = vec![RoiAnnotation {
            reader_id: "r1".into(),
            image_id: "img-1".into(),
            boxes: vec![RoiBox { x: 3, y: 4, w: 250, h: 240 }, RoiBox { x: 300, y: 10, w: 260, h: 250 }],
        }];
        let metas = vec![ImageMeta {
            image_id: "img-1".into(),
            exam_id: "exam-1".into(),
            view: View::LeftMlo,
            height_px: 3328,
            width_px: 2560,
            mm_per_pixel: 0.085,
        }];
        let (ra, rb) = (dir.path().join("ra.jsonl"), dir.path().join("rb.jsonl"));
        write_jsonl(&ra, &rois).unwrap();
        write_jsonl(&rb, &load_rois(&ra).unwrap()).unwrap();
        assert_eq!(std::fs::read(&ra).unwrap(), std::fs::read(&rb).unwrap());
        let (ia, ib) = (dir.path().join("ia.jsonl"), dir.path().join("ib.jsonl"));
        write_jsonl(&ia, &metas).unwrap();
        let loaded = load_image_meta(&ia).unwrap();
        assert_eq!(loaded, metas);
        write_jsonl(&ib, &loaded).unwrap();
        assert_eq!(std::fs::read(&ia).unwrap(), std::fs::read(&ib).unwrap());
    }
}
