use mpstack::edit::{max_abs_diff, render};
use mpstack::io::{decode_alpha_png, decode_color_png, load_scene, write_synthetic_scene, LogEntry};
use mpstack::service::{OpRequest, PlaneRef, SessionManager};
use mpstack::synth::{procedural, AlphaMode, SynthConfig};
use mpstack::{Error, PlaneId, Position, Transform2D};

fn binary_scene(dir: &std::path::Path, seed: u64) {
    let config = SynthConfig {
        alpha_mode: AlphaMode::HardCore { keep_soft_edges: false },
        instances: (4, 4),
        ..SynthConfig::default()
    };
    write_synthetic_scene(&procedural::scene(seed, 64, 48, &config).unwrap(), dir).unwrap();
}

#[test]
fn fresh_session_render_decodes_to_composite() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..10 {
        let sub = dir.path().join(seed.to_string());
        let scene = procedural::scene(seed, 64, 48, &SynthConfig::default()).unwrap();
        write_synthetic_scene(&scene, &sub).unwrap();
        let manager = SessionManager::default();
        let id = manager.create_session(&sub).unwrap().id;
        let decoded = decode_color_png(&manager.render_png(&id).unwrap()).unwrap();
        assert!(max_abs_diff(&decoded, &scene.composite) <= 1.0 / 255.0);
    }
}

#[test]
fn reorder_then_inverse_restores_render() {
    let dir = tempfile::tempdir().unwrap();
    binary_scene(dir.path(), 11);
    let manager = SessionManager::default();
    let id = manager.create_session(dir.path()).unwrap().id;
    let before = manager.render_png(&id).unwrap();
    let (p, q) = (PlaneId(0), PlaneId(2));
    manager.apply_op(&id, &OpRequest::Reorder { p, q }).unwrap();
    manager.apply_op(&id, &OpRequest::Reorder { p: q, q: p }).unwrap();
    assert_eq!(manager.render_png(&id).unwrap(), before);
}

#[test]
fn reorder_must_name_front_plane_first() {
    let dir = tempfile::tempdir().unwrap();
    binary_scene(dir.path(), 12);
    let manager = SessionManager::default();
    let id = manager.create_session(dir.path()).unwrap().id;
    let err = manager
        .apply_op(
            &id,
            &OpRequest::Reorder {
                p: PlaneId(2),
                q: PlaneId(0),
            },
        )
        .unwrap_err();
    assert!(matches!(err, Error::OrderViolation { .. }), "{err}");
    assert_eq!(manager.summary(&id).unwrap().log_len, 0);
}

#[test]
fn export_after_three_ops_logs_them_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let (src, donor_dir, out) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("out"));
    binary_scene(&src, 13);
    binary_scene(&donor_dir, 14);
    let manager = SessionManager::default();
    let id = manager.create_session(&src).unwrap().id;
    let donor = manager.create_session(&donor_dir).unwrap().id;
    manager.apply_op(&id, &OpRequest::Remove { plane: PlaneId(3) }).unwrap();
    manager
        .apply_op(
            &id,
            &OpRequest::DragAcross {
                source: PlaneRef {
                    scene: donor,
                    plane: PlaneId(1),
                },
                position: Position { x: 5.0, y: 6.0 },
                transform: Transform2D {
                    scale: 0.75,
                    ..Transform2D::identity()
                },
            },
        )
        .unwrap();
    manager
        .apply_op(
            &id,
            &OpRequest::Reorder {
                p: PlaneId(0),
                q: PlaneId(1),
            },
        )
        .unwrap();
    let manifest = manager.export(&id, &out).unwrap();
    assert_eq!(manifest.edit_log.len(), 3);
    assert!(matches!(manifest.edit_log[0], LogEntry::Remove { plane: PlaneId(3) }));
    assert!(matches!(manifest.edit_log[1], LogEntry::DragAcross { .. }));
    assert!(matches!(manifest.edit_log[2], LogEntry::Reorder { .. }));

    let loaded = load_scene(&out).unwrap();
    assert!(loaded.current.same_content(&manager.snapshot(&id).unwrap()));
    assert_eq!(render(&loaded.current), manager.render(&id).unwrap());
    // The snapshot render is written alongside for inspection.
    assert!(out.join("current/render.png").is_file());
}

#[test]
fn export_of_unknown_session_fails() {
    let dir = tempfile::tempdir().unwrap();
    let manager = SessionManager::default();
    assert!(matches!(
        manager.export("s404", dir.path()),
        Err(Error::UnknownSession(_))
    ));
}

#[test]
fn plane_views_are_pngs_of_stored_layers() {
    let dir = tempfile::tempdir().unwrap();
    binary_scene(dir.path(), 15);
    let manager = SessionManager::default();
    let id = manager.create_session(dir.path()).unwrap().id;
    let stack = manager.snapshot(&id).unwrap();
    let bg = stack.background().id();
    let alpha = decode_alpha_png(&manager.plane_alpha_png(&id, bg).unwrap()).unwrap();
    assert_eq!(&alpha, stack.background().alpha());
    let color = decode_color_png(&manager.plane_color_png(&id, PlaneId(0)).unwrap()).unwrap();
    assert_eq!(&color, stack.plane(PlaneId(0)).unwrap().color());
}

#[test]
fn reads_see_an_unchanging_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    binary_scene(dir.path(), 16);
    let manager = SessionManager::default();
    let id = manager.create_session(dir.path()).unwrap().id;
    let snapshot = manager.snapshot(&id).unwrap();
    let before = render(&snapshot);
    manager.apply_op(&id, &OpRequest::Remove { plane: PlaneId(0) }).unwrap();
    assert_eq!(render(&snapshot), before);
    assert_ne!(manager.render(&id).unwrap(), before);
}

#[test]
fn parallel_sessions_edit_independently() {
    let dir = tempfile::tempdir().unwrap();
    binary_scene(dir.path(), 17);
    let manager = SessionManager::default();
    let ids: Vec<String> = (0..4).map(|_| manager.create_session(dir.path()).unwrap().id).collect();
    std::thread::scope(|s| {
        for (k, id) in ids.iter().enumerate() {
            let manager = &manager;
            s.spawn(move || {
                for _ in 0..=k {
                    let stack = manager.snapshot(id).unwrap();
                    let first = stack.plane_ids()[0];
                    manager.apply_op(id, &OpRequest::Remove { plane: first }).unwrap();
                }
            });
        }
    });
    for (k, id) in ids.iter().enumerate() {
        assert_eq!(manager.summary(id).unwrap().log_len, k + 1);
    }
}
