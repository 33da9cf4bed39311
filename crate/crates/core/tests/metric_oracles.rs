mod oracle;

use oracle::{brute_force_ap, greedy_tp, ranking, raster_iou, IBox, ODet, OGt};
use proptest::prelude::*;
use vcm_core::metrics::{average_precision_frames, iou, match_detections, FrameEval};

fn ibox() -> impl Strategy<Value = IBox> {
    (0i64..16, 0i64..16, 1i64..8, 1i64..8).prop_map(|(x, y, w, h)| [x, y, x + w, y + h])
}

fn dets(frames: usize) -> impl Strategy<Value = Vec<ODet>> {
    // confidences on a coarse grid so ties occur
    proptest::collection::vec((0..frames, 0u32..2, 1u32..=8, ibox()), 0..10).prop_map(|v| {
        v.into_iter()
            .map(|(frame, class, c, bbox)| ODet {
                frame,
                class,
                conf: c as f64 / 8.0,
                bbox,
            })
            .collect()
    })
}

fn gts(frames: usize) -> impl Strategy<Value = Vec<OGt>> {
    proptest::collection::vec((0..frames, 0u32..2, ibox()), 0..6)
        .prop_map(|v| v.into_iter().map(|(frame, class, bbox)| OGt { frame, class, bbox }).collect())
}

fn core_ap(d: &[ODet], g: &[OGt], class: u32, frames: usize) -> Option<f64> {
    let per_frame_d: Vec<Vec<_>> = (0..frames)
        .map(|f| d.iter().filter(|x| x.frame == f && x.class == class).map(ODet::detection).collect())
        .collect();
    let per_frame_g: Vec<Vec<_>> = (0..frames)
        .map(|f| g.iter().filter(|x| x.frame == f && x.class == class).map(OGt::object).collect())
        .collect();
    let evals: Vec<FrameEval<'_>> = per_frame_d
        .iter()
        .zip(&per_frame_g)
        .map(|(d, g)| FrameEval {
            detections: d,
            ground_truth: g,
        })
        .collect();
    average_precision_frames(&evals, 0.5).unwrap()
}

proptest! {
    #[test]
    fn iou_matches_cell_counting(a in ibox(), b in ibox()) {
        let v = iou(&oracle::to_bbox(a), &oracle::to_bbox(b)).unwrap();
        prop_assert!((v - raster_iou(a, b)).abs() < 1e-12);
    }

    #[test]
    fn ap_matches_enumeration_across_frames(d in dets(3), g in gts(3)) {
        for class in 0..2 {
            let want = brute_force_ap(&d, &g, class, 0.5);
            let got = core_ap(&d, &g, class, 3);
            match (want, got) {
                (None, None) => {}
                (Some(w), Some(x)) => prop_assert!((w - x).abs() < 1e-9, "class {class}: {w} vs {x}"),
                other => prop_assert!(false, "presence differs: {other:?}"),
            }
        }
    }

    #[test]
    fn matching_agrees_with_brute_force(d in dets(1), g in gts(1)) {
        let d: Vec<ODet> = d.into_iter().map(|x| ODet { class: 0, ..x }).collect();
        let g: Vec<OGt> = g.into_iter().map(|x| OGt { class: 0, ..x }).collect();
        let order = ranking(&d);
        let tp = greedy_tp(&d, &order, &g, 0.5);
        let core = match_detections(
            &d.iter().map(ODet::detection).collect::<Vec<_>>(),
            &g.iter().map(OGt::object).collect::<Vec<_>>(),
            0.5,
        )
        .unwrap();
        for (rank, &i) in order.iter().enumerate() {
            prop_assert_eq!(core.detection_match[i].is_some(), tp[rank]);
        }
        prop_assert_eq!(core.true_positives(), tp.iter().filter(|&&t| t).count());
    }
}

#[test]
fn enumeration_oracle_on_a_hand_case() {
    // ranked TP, FP, TP over 2 GTs: P = 1, 1/2, 2/3 at R = 1/2, 1/2, 1
    let g = [
        OGt { frame: 0, class: 0, bbox: [0, 0, 4, 4] },
        OGt { frame: 0, class: 0, bbox: [10, 10, 14, 14] },
    ];
    let d = [
        ODet { frame: 0, class: 0, conf: 0.9, bbox: [0, 0, 4, 4] },
        ODet { frame: 0, class: 0, conf: 0.8, bbox: [20, 20, 22, 22] },
        ODet { frame: 0, class: 0, conf: 0.7, bbox: [10, 10, 14, 14] },
    ];
    let ap = brute_force_ap(&d, &g, 0, 0.5).unwrap();
    assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    assert!((core_ap(&d, &g, 0, 1).unwrap() - ap).abs() < 1e-12);
}
