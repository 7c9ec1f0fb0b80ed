mod common;

use std::time::{Duration, Instant};

use base64::Engine;
use image::RgbImage;
use sg4d::graph4d::{Anchor, PoseSource, SceneGraph4D, TimeWindow, SCHEMA_VERSION};
use sg4d::mask::{BinaryMask, Rle};
use sg4d::seg::{
    MaskSet, ObjectMask, PropagateRequestWire, PropagateTarget, RemoteBackend, SegBackend,
    SegError, SegRequest, SegmentMaskWire, SegmentRequestWire, SegmentResponseWire,
};
use sg4d::step::PatchStore;
use sg4d::vlm::{query, InferRequestWire, PromptOptions, RemoteHttpClient, VlmError};

const MARGIN: f64 = 3.0;

fn image_size(b64: &str) -> (u32, u32) {
    let png = base64::engine::general_purpose::STANDARD
        .decode(b64)
        .unwrap();
    image::load_from_memory(&png)
        .unwrap()
        .to_rgb8()
        .dimensions()
}

/// Stub `/segment`: the bounding rectangle of each prompt group, inflated.
fn rectangles(body: &[u8]) -> String {
    let req: SegmentRequestWire = serde_json::from_slice(body).unwrap();
    let (w, h) = image_size(&req.image);
    let masks = req
        .prompt_groups
        .iter()
        .enumerate()
        .map(|(g, pts)| {
            let lo = |k: usize| pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min) - MARGIN;
            let hi = |k: usize| pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max) + MARGIN;
            let m =
                BinaryMask::from_rect(w, h, lo(0) as i64, lo(1) as i64, hi(0) as i64, hi(1) as i64);
            SegmentMaskWire {
                mask_id: g as u32,
                rle: m.to_rle(),
                score: 0.9,
            }
        })
        .collect();
    serde_json::to_string(&SegmentResponseWire {
        masks,
        session_id: Some(format!("s-{}", req.camera_id)),
    })
    .unwrap()
}

fn request<'a>(image: &'a RgbImage, groups: Vec<Vec<[f64; 2]>>) -> SegRequest<'a> {
    SegRequest {
        frame_key: "frame_0000",
        timestamp: 0.0,
        camera_id: "left",
        image,
        prompt_groups: groups,
    }
}

#[test]
fn segment_round_trip_decodes_rle_per_prompt_group() {
    let server = common::stub::serve(Box::new(|path, body| {
        assert_eq!(path, "/segment");
        (200, rectangles(body))
    }));
    let backend = RemoteBackend::new(&server.url, Duration::from_secs(5));
    let image = RgbImage::new(40, 30);
    let groups = vec![vec![[5.0, 5.0], [8.0, 7.0]], vec![[30.0, 20.0]]];
    let set = backend.segment(&request(&image, groups.clone())).unwrap();
    assert_eq!(set.masks.len(), 2);
    assert_eq!(
        set.masks[0].mask,
        BinaryMask::from_rect(40, 30, 2, 2, 11, 10)
    );
    assert_eq!(
        set.masks[1].mask,
        BinaryMask::from_rect(40, 30, 27, 17, 33, 23)
    );
    assert_eq!(set.masks[1].prompt_points, groups[1]);

    // The session handed out by the first call is sent back on the next.
    backend.segment(&request(&image, groups)).unwrap();
    let log = server.requests.lock().unwrap();
    let first: SegmentRequestWire = serde_json::from_slice(&log[0].1).unwrap();
    let second: SegmentRequestWire = serde_json::from_slice(&log[1].1).unwrap();
    assert_eq!(first.session_id, None);
    assert_eq!(second.session_id.as_deref(), Some("s-left"));
    assert_eq!(image_size(&first.image), (40, 30));
}

#[test]
fn wrong_mask_count_and_size_are_malformed() {
    let server = common::stub::serve(Box::new(|_, _| {
        (200, r#"{"masks": [{"mask_id": 0, "rle": {"size": [30, 40], "counts": [1200]}, "score": 0.5}]}"#.into())
    }));
    let backend = RemoteBackend::new(&server.url, Duration::from_secs(5));
    let image = RgbImage::new(40, 30);
    let err = backend
        .segment(&request(&image, vec![vec![[1.0, 1.0]], vec![[2.0, 2.0]]]))
        .unwrap_err();
    assert!(matches!(err, SegError::MalformedResponse(_)), "{err}");
    let small = RgbImage::new(20, 10);
    let err = backend
        .segment(&request(&small, vec![vec![[1.0, 1.0]]]))
        .unwrap_err();
    assert!(matches!(err, SegError::MalformedResponse(m) if m.contains("size")));
}

#[test]
fn rle_runs_that_do_not_cover_the_image_are_malformed() {
    let server = common::stub::serve(Box::new(|_, _| {
        (200, r#"{"masks": [{"mask_id": 0, "rle": {"size": [30, 40], "counts": [5, 5]}, "score": 0.5}]}"#.into())
    }));
    let backend = RemoteBackend::new(&server.url, Duration::from_secs(5));
    let image = RgbImage::new(40, 30);
    let err = backend
        .segment(&request(&image, vec![vec![[1.0, 1.0]]]))
        .unwrap_err();
    assert!(matches!(err, SegError::MalformedResponse(_)));
}

#[test]
fn propagate_sends_live_masks_and_checks_ids() {
    let server = common::stub::serve(Box::new(|path, body| {
        assert_eq!(path, "/propagate");
        let req: PropagateRequestWire = serde_json::from_slice(body).unwrap();
        // Shift every mask one pixel right.
        let masks: Vec<SegmentMaskWire> = req
            .masks
            .iter()
            .map(|m| SegmentMaskWire {
                mask_id: m.mask_id,
                rle: m.rle.decode().unwrap().translate(1, 0).to_rle(),
                score: m.score,
            })
            .collect();
        (
            200,
            serde_json::to_string(&SegmentResponseWire {
                masks,
                session_id: None,
            })
            .unwrap(),
        )
    }));
    let backend = RemoteBackend::new(&server.url, Duration::from_secs(5));
    let rect = BinaryMask::from_rect(10, 8, 2, 2, 4, 4);
    let previous = MaskSet {
        camera_id: "left".into(),
        frame_key: "frame_0000".into(),
        timestamp: 0.0,
        width: 10,
        height: 8,
        masks: vec![
            ObjectMask {
                mask_id: 3,
                mask: rect.clone(),
                prompt_points: vec![[3.0, 3.0]],
                score: 0.8,
            },
            ObjectMask {
                mask_id: 5,
                mask: BinaryMask::empty(10, 8),
                prompt_points: vec![],
                score: 0.1,
            },
        ],
    };
    let image = RgbImage::new(10, 8);
    let target = PropagateTarget {
        frame_key: "frame_0001",
        timestamp: 1.0,
        image: &image,
    };
    let next = backend.propagate(&previous, &target).unwrap();
    assert_eq!(next.masks.len(), 1);
    assert_eq!(next.masks[0].mask_id, 3);
    assert_eq!(next.masks[0].mask, rect.translate(1, 0));
    assert_eq!(next.masks[0].prompt_points, vec![[3.0, 3.0]]);
    let log = server.requests.lock().unwrap();
    let sent: PropagateRequestWire = serde_json::from_slice(&log[0].1).unwrap();
    assert_eq!(sent.masks.len(), 1, "empty masks are not propagated");
    assert_eq!(sent.frame_key, "frame_0001");
}

#[test]
fn propagate_rejects_unknown_ids() {
    let server = common::stub::serve(Box::new(|_, _| {
        (
            200,
            r#"{"masks": [{"mask_id": 9, "rle": {"size": [2, 2], "counts": [4]}, "score": 0.5}]}"#
                .into(),
        )
    }));
    let backend = RemoteBackend::new(&server.url, Duration::from_secs(5));
    let previous = MaskSet {
        camera_id: "c".into(),
        frame_key: "a".into(),
        timestamp: 0.0,
        width: 2,
        height: 2,
        masks: vec![ObjectMask {
            mask_id: 1,
            mask: BinaryMask::full(2, 2),
            prompt_points: vec![],
            score: 1.0,
        }],
    };
    let image = RgbImage::new(2, 2);
    let target = PropagateTarget {
        frame_key: "b",
        timestamp: 1.0,
        image: &image,
    };
    assert!(matches!(
        backend.propagate(&previous, &target),
        Err(SegError::MalformedResponse(_))
    ));
}

#[test]
fn unreachable_and_failing_backends_are_unavailable() {
    let image = RgbImage::new(4, 4);
    let backend = RemoteBackend::new("http://127.0.0.1:9", Duration::from_secs(2));
    let err = backend
        .segment(&request(&image, vec![vec![[1.0, 1.0]]]))
        .unwrap_err();
    assert!(matches!(err, SegError::BackendUnavailable(_)));
    let server = common::stub::serve(Box::new(|_, _| (500, "{}".into())));
    let backend = RemoteBackend::new(&server.url, Duration::from_secs(2));
    let err = backend
        .segment(&request(&image, vec![vec![[1.0, 1.0]]]))
        .unwrap_err();
    assert!(matches!(err, SegError::BackendUnavailable(m) if m.contains("500")));
}

#[test]
fn rle_wire_format_is_row_major_starting_unset() {
    let m = BinaryMask::from_pixels(3, 2, [1, 2, 3]);
    let rle = m.to_rle();
    assert_eq!(
        rle,
        Rle {
            size: [2, 3],
            counts: vec![1, 3, 2]
        }
    );
    assert_eq!(
        serde_json::to_string(&rle).unwrap(),
        r#"{"size":[2,3],"counts":[1,3,2]}"#
    );
    assert_eq!(rle.decode().unwrap(), m);
}

fn empty_graph() -> SceneGraph4D {
    SceneGraph4D {
        schema_version: SCHEMA_VERSION,
        window: TimeWindow {
            start_exclusive: None,
            end: None,
            frames: 10,
        },
        frames: vec![],
        tracks: Default::default(),
        ego: vec![],
        anchor: Anchor::world(PoseSource::Manifest),
        rejected: vec![],
    }
}

#[test]
fn infer_round_trip_carries_blocks_and_template_version() {
    let server = common::stub::serve(Box::new(|path, _| {
        assert_eq!(path, "/infer");
        (
            200,
            r#"{"answer": "none", "model_id": "stub", "token_usage": {"prompt": 12}}"#.into(),
        )
    }));
    let client = RemoteHttpClient::new(&server.url, Duration::from_secs(5));
    let r = query(
        &empty_graph(),
        "Anything?",
        &PromptOptions::default(),
        &PatchStore::new(),
        &client,
    )
    .unwrap();
    assert_eq!(r.answer, "none");
    assert_eq!(r.provenance.client_id, format!("remote:{}", server.url));
    let log = server.requests.lock().unwrap();
    let sent: InferRequestWire = serde_json::from_slice(&log[0].1).unwrap();
    assert_eq!(sent.template_version, r.provenance.template_version);
    assert!(sent.text_blocks.iter().any(|b| b.contains("Anything?")));
    assert!(sent.images.is_empty());
}

#[test]
fn unreachable_inference_endpoint_fails_within_the_timeout() {
    let client = RemoteHttpClient::new("http://127.0.0.1:9", Duration::from_secs(2));
    let clock = Instant::now();
    let err = query(
        &empty_graph(),
        "q",
        &PromptOptions::default(),
        &PatchStore::new(),
        &client,
    )
    .unwrap_err();
    assert!(matches!(err, VlmError::ClientUnavailable(_)), "{err}");
    assert!(clock.elapsed() < Duration::from_secs(3));
}

#[test]
fn slow_inference_endpoint_times_out() {
    let server = common::stub::serve(Box::new(|_, _| {
        std::thread::sleep(Duration::from_millis(1500));
        (200, r#"{"answer": "late"}"#.into())
    }));
    let client = RemoteHttpClient::new(&server.url, Duration::from_millis(300));
    let clock = Instant::now();
    let err = query(
        &empty_graph(),
        "q",
        &PromptOptions::default(),
        &PatchStore::new(),
        &client,
    )
    .unwrap_err();
    assert!(matches!(err, VlmError::ClientTimeout { .. }), "{err}");
    assert!(clock.elapsed() < Duration::from_millis(1200));
}

#[test]
fn malformed_and_empty_answers_are_rejected() {
    for reply in ["not json", r#"{"answer": ""}"#, r#"{"text": "x"}"#] {
        let server = common::stub::serve(Box::new(move |_, _| (200, reply.to_string())));
        let client = RemoteHttpClient::new(&server.url, Duration::from_secs(5));
        let err = query(
            &empty_graph(),
            "q",
            &PromptOptions::default(),
            &PatchStore::new(),
            &client,
        )
        .unwrap_err();
        assert!(
            matches!(err, VlmError::MalformedResponse(_)),
            "{reply}: {err}"
        );
    }
}
