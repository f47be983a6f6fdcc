use proptest::prelude::*;
use uwsim::detloss::{
    match_patches, object_focused_loss, patch_perceptual_loss, BBox, GtBox, Prediction,
    MATCH_THRESHOLD,
};
use uwsim::imaging::{
    decode_pfm, decode_pgm, decode_png_rgb, decode_ppm, encode_pfm, encode_pgm16, encode_png_rgb,
    encode_ppm, rgb_to_lab,
};
use uwsim::metrics::{self, MetricConfig};
use uwsim::physics::absorption;
use uwsim::{DepthMap, Kernel, RgbImage};

fn rgb_u8(max_side: usize) -> impl Strategy<Value = RgbImage> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(0u8..=255, w * h * 3).prop_map(move |bytes| {
            RgbImage::new(w, h, bytes.iter().map(|&b| f64::from(b) / 255.0).collect()).unwrap()
        })
    })
}

fn rgb_unit(w: usize, h: usize) -> impl Strategy<Value = RgbImage> {
    prop::collection::vec(0.0f64..=1.0, w * h * 3)
        .prop_map(move |data| RgbImage::new(w, h, data).unwrap())
}

fn depth(w: usize, h: usize) -> impl Strategy<Value = DepthMap> {
    prop::collection::vec(0.0f64..=1.0, w * h).prop_map(move |d| DepthMap::new(w, h, d).unwrap())
}

fn prediction(classes: usize) -> impl Strategy<Value = Prediction> {
    (
        prop::collection::vec(0.01f64..1.0, classes + 1),
        prop::array::uniform4(-1.0f64..2.0),
    )
        .prop_map(|(raw, ploc)| {
            let s: f64 = raw.iter().sum();
            Prediction {
                pcls: raw.iter().map(|v| v / s).collect(),
                ploc,
            }
        })
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0f64..1.0, 0.0f64..1.0, 0.02f64..0.8, 0.02f64..0.8)
        .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h))
}

proptest! {
    #[test]
    fn ppm_round_trip(img in rgb_u8(12)) {
        prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn png_round_trip(img in rgb_u8(12)) {
        prop_assert_eq!(decode_png_rgb(&encode_png_rgb(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn pgm16_round_trip(words in prop::collection::vec(0u16..=u16::MAX, 1..64)) {
        let d = DepthMap::new(words.len(), 1, words.iter().map(|&v| f64::from(v) / 65535.0).collect()).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm16(&d)).unwrap(), d);
    }

    #[test]
    fn pfm_round_trip(values in prop::collection::vec(0.0f32..=1.0, 1..64)) {
        let d = DepthMap::new(1, values.len(), values.iter().map(|&v| f64::from(v)).collect()).unwrap();
        prop_assert_eq!(decode_pfm(&encode_pfm(&d)).unwrap(), d);
    }

    #[test]
    fn gray_is_achromatic(v in 0.0f64..=1.0) {
        let lab = rgb_to_lab(&RgbImage::filled(1, 1, [v; 3]).unwrap());
        let [_, a, b] = lab.get(0, 0);
        prop_assert!(a.abs() < 1e-3 && b.abs() < 1e-3);
    }

    #[test]
    fn absorption_never_brightens(
        (img, d) in (1usize..8, 1usize..8).prop_flat_map(|(w, h)| (rgb_unit(w, h), depth(w, h))),
        beta in prop::array::uniform3(0.0f64..5.0),
    ) {
        let out = absorption(&img, &d, beta).unwrap();
        for (o, i) in out.data().iter().zip(img.data()) {
            prop_assert!(*o <= *i && *o >= 0.0);
        }
    }

    #[test]
    fn kernel_is_normalized(q in 0.05f64..100.0, r in 0usize..8) {
        let k = Kernel::gaussian(q, 2 * r + 1).unwrap();
        let sum: f64 = k.to_dense().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_reference_symmetry((a, b) in (rgb_unit(12, 12), rgb_unit(12, 12))) {
        let cfg = MetricConfig::default();
        prop_assert_eq!(metrics::mse(&a, &b).unwrap(), metrics::mse(&b, &a).unwrap());
        prop_assert_eq!(metrics::psnr(&a, &b).unwrap(), metrics::psnr(&b, &a).unwrap());
        let (s1, s2) = (metrics::ssim(&a, &b, &cfg).unwrap(), metrics::ssim(&b, &a, &cfg).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s1));
    }

    #[test]
    fn mirror_invariance((a, b) in (rgb_unit(16, 16), rgb_unit(16, 16))) {
        let cfg = MetricConfig::default();
        let (fa, fb) = (a.flip_horizontal(), b.flip_horizontal());
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1.0);
        prop_assert!(close(metrics::mse(&a, &b).unwrap(), metrics::mse(&fa, &fb).unwrap()));
        prop_assert!(close(metrics::ssim(&a, &b, &cfg).unwrap(), metrics::ssim(&fa, &fb, &cfg).unwrap()));
        prop_assert!(close(metrics::pcqi(&a, &b, &cfg).unwrap(), metrics::pcqi(&fa, &fb, &cfg).unwrap()));
        prop_assert!(close(metrics::uiqm(&a, &cfg).unwrap(), metrics::uiqm(&fa, &cfg).unwrap()));
        prop_assert!(close(metrics::uciqe(&a, &cfg), metrics::uciqe(&fa, &cfg)));
    }

    #[test]
    fn object_focused_ignores_background_predictions(
        patches in prop::collection::vec(bbox(), 3..40),
        gt_boxes in prop::collection::vec((bbox(), 1usize..=3), 1..4),
        preds in prop::collection::vec(prediction(3), 40),
        replacement in prop::collection::vec(prediction(3), 40),
    ) {
        let gts: Vec<GtBox> = gt_boxes
            .iter()
            .map(|(b, class)| GtBox { cx: b.cx, cy: b.cy, w: b.w, h: b.h, class: *class })
            .collect();
        let assignments = match_patches(&patches, &gts, MATCH_THRESHOLD);
        let preds = &preds[..patches.len()];
        let swapped: Vec<Prediction> = preds
            .iter()
            .zip(&replacement)
            .zip(&assignments)
            .map(|((p, r), a)| if a.is_object() { p.clone() } else { r.clone() })
            .collect();
        let before = object_focused_loss(preds, &assignments).unwrap();
        let after = object_focused_loss(&swapped, &assignments).unwrap();
        prop_assert_eq!(before.total.to_bits(), after.total.to_bits());
        prop_assert!(before.total >= 0.0);
        prop_assert!(patch_perceptual_loss(preds, &assignments).unwrap().total >= 0.0);
    }
}
