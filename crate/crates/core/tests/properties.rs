use mpstack::edit::{render, reorder, swap_planes};
use mpstack::metrics::{mad, mse, sad};
use mpstack::model::{plane_mean_depth, sort_by_depth};
use mpstack::sgmp;
use mpstack::synth::{procedural, AlphaMode, SynthConfig};
use mpstack::{AlphaMatte, DepthMap, FootprintMask, Image, Plane, PlaneId};
use proptest::prelude::*;

fn plane(id: u32, depth: f64) -> Plane {
    let alpha = AlphaMatte::filled(2, 2, 0.5);
    let footprint = FootprintMask::from_alpha(&alpha, 0.0);
    Plane::instance(PlaneId(id), Image::filled(2, 2, [0.3; 3]), alpha, footprint, depth).unwrap()
}

fn key(planes: &[Plane]) -> Vec<(u32, u64)> {
    planes.iter().map(|p| (p.id().0, p.mean_depth().to_bits())).collect()
}

fn matte(values: Vec<f32>) -> AlphaMatte {
    let n = values.len();
    AlphaMatte::new(n, 1, values).unwrap()
}

proptest! {
    #[test]
    fn sort_is_an_idempotent_permutation(depths in prop::collection::vec(1u8..6, 0..12)) {
        let mut planes: Vec<Plane> = depths.iter().enumerate().map(|(i, &d)| plane(i as u32, d as f64)).collect();
        planes.push(Plane::background(PlaneId(99), Image::filled(2, 2, [0.0; 3]), AlphaMatte::zeros(2, 2)).unwrap());
        let once = sort_by_depth(planes.clone());
        let twice = sort_by_depth(once.clone());
        prop_assert_eq!(key(&once), key(&twice));
        let mut a = key(&planes);
        let mut b = key(&once);
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        prop_assert!(once.last().unwrap().is_background());
        // Ties keep their original order.
        for w in once.windows(2) {
            if w[0].mean_depth() == w[1].mean_depth() {
                prop_assert!(w[0].id().0 < w[1].id().0);
            }
        }
    }

    #[test]
    fn mean_depth_ignores_alpha_scale(
        values in prop::collection::vec(0.0f32..1.0, 16),
        depth in prop::collection::vec(0.5f32..30.0, 16),
        factor in 0.01f32..1.0,
    ) {
        let depth = DepthMap::new(4, 4, depth).unwrap();
        let alpha = AlphaMatte::new(4, 4, values.clone()).unwrap();
        let scaled = AlphaMatte::new(4, 4, values.iter().map(|v| v * factor).collect()).unwrap();
        let a = plane_mean_depth(&alpha, &depth, false);
        let b = plane_mean_depth(&scaled, &depth, false);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn masks_partition_and_follow_nearest_plane(
        depth in prop::collection::vec(0.5f32..50.0, 24),
        n in 2usize..8,
        tau_frac in 0.005f64..2.0,
    ) {
        let depth = DepthMap::new(6, 4, depth).unwrap();
        prop_assume!(depth.max() > depth.min());
        let planes = sgmp::refine_plane_depths(&depth, &sgmp::initial_plane_depths(&depth, n).unwrap(), 20).unwrap();
        for d in planes.refined().windows(2) {
            prop_assert!(d[0] < d[1]);
        }
        let tau = tau_frac * (depth.max() - depth.min()) as f64;
        let masks = sgmp::plane_masks(&depth, &planes, tau).unwrap();
        for i in 0..24 {
            let s: f64 = (0..masks.count()).map(|k| masks.mask(k)[i]).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
        prop_assert_eq!(masks.argmax(), sgmp::nearest_plane(depth.values(), planes.refined()));
    }

    #[test]
    fn matte_errors_are_symmetric(pair in prop::collection::vec((0.0f32..=1.0, 0.0f32..=1.0), 1..40)) {
        let (a, b): (Vec<f32>, Vec<f32>) = pair.into_iter().unzip();
        let (a, b) = (matte(a), matte(b));
        prop_assert_eq!(sad(&a, &b), sad(&b, &a));
        prop_assert_eq!(mse(&a, &b), mse(&b, &a));
        prop_assert_eq!(mad(&a, &b), mad(&b, &a));
        prop_assert_eq!(sad(&a, &a), 0.0);
    }

    #[test]
    fn swap_twice_restores_hard_core_render(seed in 0u64..500) {
        let config = SynthConfig { alpha_mode: AlphaMode::HardCore { keep_soft_edges: false }, ..SynthConfig::default() };
        let scene = procedural::scene(seed, 40, 30, &config).unwrap();
        let ids = scene.stack.plane_ids();
        let once = swap_planes(&scene.stack, ids[0], ids[1]).unwrap();
        let twice = swap_planes(&once, ids[0], ids[1]).unwrap();
        prop_assert_eq!(render(&twice), render(&scene.stack));
    }

    #[test]
    fn reorder_keeps_other_planes_in_place(seed in 0u64..500) {
        let config = SynthConfig { alpha_mode: AlphaMode::HardCore { keep_soft_edges: true }, ..SynthConfig::default() };
        let scene = procedural::scene(seed, 40, 30, &config).unwrap();
        let ids = scene.stack.plane_ids();
        let n = scene.stack.instance_count();
        let out = reorder(&scene.stack, ids[0], ids[n - 1]).unwrap();
        let after = out.plane_ids();
        prop_assert_eq!(after[0], ids[n - 1]);
        prop_assert_eq!(after[n - 1], ids[0]);
        prop_assert_eq!(&after[1..n - 1], &ids[1..n - 1]);
    }
}
