use std::collections::BTreeMap;

use axum::body::Body;
use axum::http::{header, HeaderMap, Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use stratum_core::components::{OracleCompleter, OracleSegmenter};
use stratum_core::edit::{apply_edit, Edit};
use stratum_core::engine::{decompose, EngineConfig, TraceDocument};
use stratum_core::scene::composite;
use stratum_core::synth::{generate_scene, ground_truth_matrix, SynthConfig};
use stratum_core::{Appearance, Scene};
use stratum_service::{app, ErrorBody, GraphView, SceneView, ServiceConfig};

fn synth_cfg(seed: u64) -> SynthConfig {
    SynthConfig {
        width: 96,
        height: 80,
        min_objects: 4,
        max_objects: 6,
        size_range: (20, 48),
        seed,
        ..SynthConfig::default()
    }
}

fn service() -> Router {
    app(&ServiceConfig::default()).unwrap().0
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, HeaderMap, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

async fn create(app: &Router, body: Value) -> SceneView {
    let (status, _, bytes) = send(app, "POST", "/scenes", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

async fn image(app: &Router, id: &str) -> Appearance {
    let (status, headers, bytes) = send(app, "GET", &format!("/scenes/{id}/image"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_TYPE], "image/png");
    Appearance::decode_png(&bytes).unwrap()
}

fn error(bytes: &[u8]) -> ErrorBody {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn synth_scene_lists_instances_front_to_back() {
    let app = service();
    let cfg = synth_cfg(1);
    let gt = generate_scene(&cfg).unwrap();
    let view = create(&app, json!({ "synth": cfg })).await;
    assert_eq!((view.width, view.height), (gt.width(), gt.height()));
    assert_eq!(view.instances.len(), gt.len());
    for (v, inst) in view.instances.iter().zip(gt.instances()) {
        assert_eq!(v.id, inst.id);
        assert_eq!(v.z, inst.z);
        assert_eq!(v.area, inst.amodal_mask.area());
        assert_eq!(v.visible_area, inst.visible_mask.area());
        assert_eq!(v.visible_mask.decode().unwrap(), inst.visible_mask);
        assert_eq!(v.image_url, format!("/scenes/{}/instance/{}/image", view.id, v.id));
    }
    let (status, _, bytes) = send(&app, "GET", &format!("/scenes/{}", view.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<SceneView>(&bytes).unwrap(), view);
    assert_eq!(image(&app, &view.id).await, composite(&gt));
}

#[tokio::test]
async fn edits_match_the_library_bit_for_bit() {
    let app = service();
    let cfg = synth_cfg(2);
    let mut expected: Scene = generate_scene(&cfg).unwrap();
    let view = create(&app, json!({ "synth": cfg })).await;
    let ids = expected.ids();
    let edits = [
        Edit::Move { target: ids[0], dx: 7, dy: -3 },
        Edit::Reorder { target: ids[ids.len() - 1], new_z: 0 },
        Edit::Delete { target: ids[1] },
    ];
    for edit in edits {
        let (status, _, bytes) = send(&app, "POST", &format!("/scenes/{}/edits", view.id), Some(json!(edit))).await;
        assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
        expected = apply_edit(&expected, &edit).unwrap().0;
        let after: SceneView = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(after.instances.iter().map(|i| i.id).collect::<Vec<_>>(), expected.ids());
        assert_eq!(image(&app, &view.id).await, composite(&expected));
    }
}

#[tokio::test]
async fn graph_after_reorder_is_valid_and_matches_ground_truth() {
    let app = service();
    let cfg = synth_cfg(3);
    let scene = generate_scene(&cfg).unwrap();
    let view = create(&app, json!({ "synth": cfg })).await;
    let back = *scene.ids().last().unwrap();
    let edit = Edit::Reorder { target: back, new_z: 0 };
    let (status, _, _) = send(&app, "POST", &format!("/scenes/{}/edits", view.id), Some(json!(edit))).await;
    assert_eq!(status, StatusCode::OK);
    let edited = apply_edit(&scene, &edit).unwrap().0;

    let (status, _, bytes) = send(&app, "GET", &format!("/scenes/{}/graph", view.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let graph: GraphView = serde_json::from_slice(&bytes).unwrap();
    let gt = ground_truth_matrix(&edited, cfg.overlap_threshold);
    assert!(graph.violations.is_empty());
    assert_eq!(graph.ids, gt.ids());
    assert_eq!(graph.rows, gt.rows());
    assert_eq!(graph.layer_order.len(), edited.len());
    for [front, behind] in &graph.edges {
        assert_eq!(gt.get(*front, *behind).unwrap(), 1);
        assert!(graph.layer_order[front] < graph.layer_order[behind]);
    }
    // the moved instance now occludes everything it overlaps
    for &other in &graph.ids {
        assert_ne!(gt.get(back, other).unwrap(), -1);
    }
}

#[tokio::test]
async fn undo_walks_back_to_the_base_scene() {
    let app = service();
    let cfg = synth_cfg(4);
    let base = generate_scene(&cfg).unwrap();
    let view = create(&app, json!({ "synth": cfg })).await;
    let uri = format!("/scenes/{}", view.id);
    let ids = base.ids();
    for edit in [Edit::Delete { target: ids[0] }, Edit::Move { target: ids[1], dx: -5, dy: 5 }] {
        assert_eq!(send(&app, "POST", &format!("{uri}/edits"), Some(json!(edit))).await.0, StatusCode::OK);
    }
    for remaining in [1, 0] {
        let (status, _, bytes) = send(&app, "POST", &format!("{uri}/undo"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(serde_json::from_slice::<SceneView>(&bytes).unwrap().edits, remaining);
    }
    assert_eq!(image(&app, &view.id).await, composite(&base));
    let (_, _, bytes) = send(&app, "GET", &uri, None).await;
    assert_eq!(serde_json::from_slice::<SceneView>(&bytes).unwrap(), view);

    let (status, _, bytes) = send(&app, "POST", &format!("{uri}/undo"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error(&bytes).code, "nothing_to_undo");
}

#[tokio::test]
async fn unknown_sessions_instances_and_routes_are_404() {
    let app = service();
    let view = create(&app, json!({ "synth": synth_cfg(5) })).await;
    let missing = view.instances.iter().map(|i| i.id).max().unwrap() + 100;
    let cases = [
        ("GET", "/scenes/999999".to_string(), None),
        ("GET", "/scenes/999999/graph".to_string(), None),
        ("GET", "/scenes/999999/image".to_string(), None),
        ("POST", "/scenes/999999/undo".to_string(), None),
        ("POST", "/scenes/999999/edits".to_string(), Some(json!({"kind": "delete", "target": 1}))),
        ("GET", format!("/scenes/{}/instance/{missing}/image", view.id), None),
        ("POST", format!("/scenes/{}/edits", view.id), Some(json!({"kind": "delete", "target": missing}))),
        ("GET", "/nowhere".to_string(), None),
    ];
    for (method, uri, body) in cases {
        let (status, _, bytes) = send(&app, method, &uri, body).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {uri}");
        assert_eq!(error(&bytes).code, "not_found", "{method} {uri}");
    }
    // a failed edit leaves the log untouched
    let (_, _, bytes) = send(&app, "GET", &format!("/scenes/{}", view.id), None).await;
    assert_eq!(serde_json::from_slice::<SceneView>(&bytes).unwrap().edits, 0);
}

#[tokio::test]
async fn malformed_and_invalid_requests_are_422() {
    let app = service();
    let view = create(&app, json!({ "synth": synth_cfg(6) })).await;
    let target = view.instances[0].id;
    let n = view.instances.len();
    let uri = format!("/scenes/{}/edits", view.id);
    let bad_edits = [
        json!("not an edit"),
        json!({"kind": "explode", "target": target}),
        json!({"kind": "move", "target": target}),
        json!({"kind": "delete", "target": target, "extra": 1}),
        json!({"kind": "reorder", "target": target, "new_z": n}),
        json!({"kind": "move", "target": target, "dx": 10_000, "dy": 0}),
    ];
    for body in bad_edits {
        let (status, _, bytes) = send(&app, "POST", &uri, Some(body.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert_eq!(error(&bytes).code, "invalid_edit", "{body}");
    }
    let req = Request::post(&uri).body(Body::from("{truncated")).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::UNPROCESSABLE_ENTITY);

    for body in [
        json!({}),
        json!({"synth": {"width": 0}}),
        json!({"decompose": {"segmenter": "psychic"}}),
    ] {
        let (status, _, bytes) = send(&app, "POST", "/scenes", Some(body.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert_eq!(error(&bytes).code, "invalid_request", "{body}");
    }
}

#[tokio::test]
async fn clipping_move_reports_a_warning() {
    let app = service();
    let cfg = synth_cfg(7);
    let view = create(&app, json!({ "synth": cfg })).await;
    let inst = &view.instances[0];
    let dx = i64::from(cfg.width) - i64::from(inst.bbox[0]) - 2;
    let edit = json!({"kind": "move", "target": inst.id, "dx": dx, "dy": 0});
    let (status, _, bytes) = send(&app, "POST", &format!("/scenes/{}/edits", view.id), Some(edit)).await;
    assert_eq!(status, StatusCode::OK);
    let after: SceneView = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(after.warnings.len(), 1, "{:?}", after.warnings);
    assert!(after.warnings[0].contains("clipped"));
}

#[tokio::test]
async fn cors_headers_follow_the_configured_origin() {
    let open = service();
    let req = Request::get("/nowhere").header(header::ORIGIN, "http://localhost:5173").body(Body::empty()).unwrap();
    let resp = open.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");

    let cfg = ServiceConfig {
        cors_origin: Some("http://editor.test".into()),
        ..ServiceConfig::default()
    };
    let strict = app(&cfg).unwrap().0;
    let preflight = Request::builder()
        .method("OPTIONS")
        .uri("/scenes")
        .header(header::ORIGIN, "http://editor.test")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
        .body(Body::empty())
        .unwrap();
    let resp = strict.clone().oneshot(preflight).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://editor.test");
    assert!(resp.headers()[header::ACCESS_CONTROL_ALLOW_METHODS].to_str().unwrap().contains("POST"));

    let req = Request::get("/nowhere").header(header::ORIGIN, "http://evil.test").body(Body::empty()).unwrap();
    let resp = strict.oneshot(req).await.unwrap();
    assert!(resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());

    assert!(app(&ServiceConfig {
        cors_origin: Some("bad\norigin".into()),
        ..ServiceConfig::default()
    })
    .is_err());
}

#[tokio::test]
async fn instance_image_alpha_is_the_amodal_mask() {
    let app = service();
    let cfg = synth_cfg(8);
    let scene = generate_scene(&cfg).unwrap();
    let view = create(&app, json!({ "synth": cfg })).await;
    for inst in scene.instances() {
        let (status, headers, bytes) =
            send(&app, "GET", &format!("/scenes/{}/instance/{}/image", view.id, inst.id), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(headers[header::CONTENT_TYPE], "image/png");
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!(info.color_type, png::ColorType::Rgba);
        assert_eq!((info.width, info.height), (scene.width(), scene.height()));
        for y in 0..info.height {
            for x in 0..info.width {
                let px = &buf[((y * info.width + x) * 4) as usize..][..4];
                let inside = inst.amodal_mask.get(x, y);
                assert_eq!(px[3], if inside { 255 } else { 0 }, "alpha at ({x}, {y})");
                if inside {
                    assert_eq!(px[..3], inst.appearance.get(x, y));
                }
            }
        }
    }
}

fn trace_upload(seed: u64, with_steps: bool) -> (Scene, Value) {
    let gt = generate_scene(&synth_cfg(seed)).unwrap();
    let cfg = EngineConfig::default();
    let input = composite(&gt);
    let mut seg = OracleSegmenter::new(gt.clone(), cfg.overlap_threshold);
    let mut comp = OracleCompleter::new(gt.clone());
    let (trace, matrix) = decompose(&input, &mut seg, &mut comp, &cfg).unwrap();
    let doc = TraceDocument::new(&trace, &matrix, with_steps);
    let b64 = |a: &Appearance| base64::engine::general_purpose::STANDARD.encode(a.encode_png().unwrap());
    let mut images = BTreeMap::new();
    images.insert(doc.input_image.clone(), b64(&input));
    images.insert(doc.final_image.clone(), b64(trace.final_image(&input)));
    for (s, e) in trace.steps.iter().zip(&doc.steps) {
        if let Some(name) = &e.completed_image {
            images.insert(name.clone(), b64(&s.completed_image));
        }
    }
    (gt, json!({"trace": {"document": doc, "images": images}}))
}

#[tokio::test]
async fn uploaded_trace_becomes_an_editable_scene() {
    let app = service();
    let (gt, body) = trace_upload(9, true);
    let view = create(&app, body).await;
    assert_eq!(view.instances.len(), gt.len());
    assert!(view
        .instances
        .iter()
        .all(|i| i.provenance == Some(stratum_core::edit::Provenance::Inpainted)));
    let mut by_id: BTreeMap<_, _> = gt.instances().iter().map(|i| (i.id, i)).collect();
    for v in &view.instances {
        let inst = by_id.remove(&v.id).expect("same ids as ground truth");
        assert_eq!(v.area, inst.amodal_mask.area());
    }
    assert_eq!(image(&app, &view.id).await, composite(&gt));

    let (status, _, bytes) = send(&app, "GET", &format!("/scenes/{}/graph", view.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let graph: GraphView = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(graph.rows, ground_truth_matrix(&gt, 1).rows());

    let (_, mut body) = trace_upload(9, true);
    body["trace"]["images"].as_object_mut().unwrap().remove("input.png");
    let (status, _, bytes) = send(&app, "POST", "/scenes", Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(error(&bytes).message.contains("input.png"));
}

#[tokio::test]
async fn decompose_request_runs_the_engine() {
    let app = service();
    let cfg = synth_cfg(10);
    let gt = generate_scene(&cfg).unwrap();
    let view = create(&app, json!({"decompose": {"synth": cfg}})).await;
    // layer order may differ from the synthetic z among unrelated instances
    let mut ids: Vec<_> = view.instances.iter().map(|i| i.id).collect();
    ids.sort_unstable();
    let mut expected = gt.ids();
    expected.sort_unstable();
    assert_eq!(ids, expected);
    assert!(view
        .instances
        .iter()
        .all(|i| i.provenance == Some(stratum_core::edit::Provenance::Oracle)));
    assert_eq!(image(&app, &view.id).await, composite(&gt));

    let view = create(
        &app,
        json!({"decompose": {"synth": cfg, "segmenter": "heuristic", "completer": "inpaint"}}),
    )
    .await;
    assert!(!view.instances.is_empty());
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let synth = synth_cfg(11);
    let (first, before, edited) = {
        let app = app(&cfg).unwrap().0;
        let view = create(&app, json!({ "synth": synth })).await;
        let ids: Vec<_> = view.instances.iter().map(|i| i.id).collect();
        for edit in [
            json!({"kind": "move", "target": ids[0], "dx": 4, "dy": 4}),
            json!({"kind": "reorder", "target": ids[2], "new_z": 0}),
        ] {
            assert_eq!(send(&app, "POST", &format!("/scenes/{}/edits", view.id), Some(edit)).await.0, StatusCode::OK);
        }
        let (_, _, bytes) = send(&app, "GET", &format!("/scenes/{}", view.id), None).await;
        let before: SceneView = serde_json::from_slice(&bytes).unwrap();
        (view.id.clone(), before, image(&app, &view.id).await)
    };

    let app = app(&cfg).unwrap().0;
    let (status, _, bytes) = send(&app, "GET", &format!("/scenes/{first}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<SceneView>(&bytes).unwrap(), before);
    assert_eq!(image(&app, &first).await, edited);

    // the log is restored too, so undo still reaches the base scene
    for _ in 0..2 {
        assert_eq!(send(&app, "POST", &format!("/scenes/{first}/undo"), None).await.0, StatusCode::OK);
    }
    assert_eq!(image(&app, &first).await, composite(&generate_scene(&synth).unwrap()));

    // new sessions do not reuse an existing id
    let second = create(&app, json!({ "synth": synth_cfg(12) })).await;
    assert_ne!(second.id, first);
}
