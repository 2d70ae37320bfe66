use madnet::data::{d1_all, epe, DomainShiftSpec, SceneSpec, SequenceGenerator, StereoFrame, TextureFamily};
use madnet::loss::reprojection_loss;
use madnet::{Shape4, Tensor4};
use proptest::prelude::*;

fn noise_free(mut spec: SceneSpec) -> SceneSpec {
    spec.shift.noise_sigma = 0.0;
    spec
}

fn masked_loss(f: &StereoFrame<f64>, d: &Tensor4<f64>) -> f64 {
    let l = reprojection_loss(&f.left, &f.right, d).unwrap();
    l.masked_mean(f.valid_mask.as_ref().unwrap()).unwrap()
}

fn offset(t: &Tensor4<f64>, by: f64) -> Tensor4<f64> {
    t.map(|v| v + by)
}

#[test]
fn ground_truth_explains_the_views_in_every_domain() {
    for spec in [
        SceneSpec::domain_a(64, 192),
        noise_free(SceneSpec::domain_b(64, 192)),
        noise_free(SceneSpec::domain_c(64, 192)),
    ] {
        let mut g = SequenceGenerator::new(spec, 11).unwrap();
        for i in 0..12 {
            let f = g.next_frame::<f64>().unwrap();
            let gt = f.gt_disparity.clone().unwrap();
            let at_gt = masked_loss(&f, &gt);
            assert!(at_gt < 1e-3, "frame {i}: {at_gt}");
            for by in [-1.0, 1.0] {
                let off = masked_loss(&f, &offset(&gt, by));
                assert!(off > at_gt, "frame {i}: {off} <= {at_gt} at {by:+}");
            }
        }
    }
}

#[test]
fn sensor_noise_sets_the_loss_floor() {
    // independent noise per view: the loss at ground truth is bounded
    // below by the noise, not by geometry
    let spec = SceneSpec::domain_b(64, 192);
    let clean = noise_free(spec.clone());
    let f = SequenceGenerator::new(spec, 3).unwrap().next_frame::<f64>().unwrap();
    let c = SequenceGenerator::new(clean, 3).unwrap().next_frame::<f64>().unwrap();
    let gt = f.gt_disparity.clone().unwrap();
    assert!(masked_loss(&f, &gt) > masked_loss(&c, &gt));
    assert!(masked_loss(&f, &offset(&gt, 1.0)) > masked_loss(&f, &gt));
}

#[test]
fn integer_shift_pair_is_explained_exactly() {
    let spec = SceneSpec {
        background_disparity: (3.0, 3.0),
        objects: (0, 0),
        max_slant: 0.0,
        ..SceneSpec::domain_a(32, 64)
    };
    let f = SequenceGenerator::new(spec, 5).unwrap().next_frame::<f64>().unwrap();
    let gt = f.gt_disparity.clone().unwrap();
    assert!(gt.data().iter().all(|&d| d == 3.0));
    // left(x) = right(x - 3) wherever x >= 3
    for c in 0..3 {
        for y in 0..32 {
            for x in 3..64 {
                assert_eq!(f.left.at(0, c, y, x), f.right.at(0, c, y, x - 3));
            }
        }
    }
    let mask = f.valid_mask.as_ref().unwrap();
    assert_eq!(mask.at(0, 0, 10, 2), 0.0);
    assert_eq!(mask.at(0, 0, 10, 10), 1.0);
    assert!(masked_loss(&f, &gt) < 1e-9);
}

#[test]
fn photometric_shift_leaves_geometry_alone() {
    let b = SceneSpec::domain_b(64, 128);
    let plain = SceneSpec {
        shift: DomainShiftSpec::identity(TextureFamily::Blobs),
        ..b.clone()
    };
    let mut gb = SequenceGenerator::new(b, 8).unwrap();
    let mut gp = SequenceGenerator::new(plain, 8).unwrap();
    for _ in 0..5 {
        let (x, y) = (gb.next_frame::<f32>().unwrap(), gp.next_frame::<f32>().unwrap());
        assert_eq!(x.gt_disparity, y.gt_disparity);
        assert_eq!(x.valid_mask, y.valid_mask);
        assert_ne!(x.left, y.left);
    }
}

#[test]
fn scene_cuts_follow_scene_length() {
    let spec = SceneSpec {
        scene_length: 4,
        ..SceneSpec::domain_b(32, 64)
    };
    let mut g = SequenceGenerator::new(spec, 2).unwrap();
    let frames: Vec<StereoFrame<f32>> = (0..9).map(|_| g.next_frame().unwrap()).collect();
    let change = |a: &StereoFrame<f32>, b: &StereoFrame<f32>| {
        let (x, y) = (a.gt_disparity.as_ref().unwrap(), b.gt_disparity.as_ref().unwrap());
        x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).sum::<f32>() / x.len() as f32
    };
    let within = change(&frames[1], &frames[2]);
    let across = change(&frames[3], &frames[4]);
    assert!(across > 5.0 * within, "{across} vs {within}");
}

proptest! {
    #[test]
    fn metrics_ignore_pixel_order(
        vals in proptest::collection::vec((0.0f32..40.0, 0.0f32..40.0, proptest::bool::ANY), 12),
        rot in 0usize..12,
    ) {
        let mk = |f: &dyn Fn(&(f32, f32, bool)) -> f32, shift: usize| {
            let mut v: Vec<f32> = vals.iter().map(f).collect();
            v.rotate_left(shift);
            Tensor4::from_vec(Shape4::new(1, 1, 3, 4), v).unwrap()
        };
        let pred = |t: &(f32, f32, bool)| t.0;
        let gt = |t: &(f32, f32, bool)| t.1;
        let mask = |t: &(f32, f32, bool)| if t.2 { 1.0 } else { 0.0 };
        let a = (epe(&mk(&pred, 0), &mk(&gt, 0), &mk(&mask, 0)).unwrap(), d1_all(&mk(&pred, 0), &mk(&gt, 0), &mk(&mask, 0), 3.0).unwrap());
        let b = (epe(&mk(&pred, rot), &mk(&gt, rot), &mk(&mask, rot)).unwrap(), d1_all(&mk(&pred, rot), &mk(&gt, rot), &mk(&mask, rot), 3.0).unwrap());
        match (a, b) {
            ((Some(e1), Some(d1)), (Some(e2), Some(d2))) => {
                prop_assert!((e1 - e2).abs() < 1e-9);
                prop_assert!((d1 - d2).abs() < 1e-9);
            }
            ((None, None), (None, None)) => {}
            other => prop_assert!(false, "{other:?}"),
        }
    }
}
