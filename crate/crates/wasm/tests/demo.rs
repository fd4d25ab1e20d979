use tdm_core::phantom::{gen_phantom, PhantomKind, PhantomOptions};
use tdm_core::Image;
use tdm_wasm::{reconstruct, to_rgba, Demo, Settings};

#[test]
fn rgba_clamps_and_is_opaque() {
    let mut image = Image::zeros(1, 3);
    image.data_mut()[[0, 1]] = 0.5;
    image.data_mut()[[0, 2]] = 2.0;
    assert_eq!(to_rgba(&image), [0, 0, 0, 255, 128, 128, 128, 255, 255, 255, 255, 255]);
}

#[test]
fn demo_exposes_pair_and_empty_path_before_reconstruction() {
    let demo = Demo::new("ellipses", 32, 1).unwrap();
    assert_eq!(demo.size(), 32);
    assert_eq!(demo.target_rgba().len(), 32 * 32 * 4);
    assert_ne!(demo.reference_rgba(), demo.target_rgba());
    assert_eq!(demo.path_len(), 0);
    assert!(demo.frame_rgba(0).is_empty());
}

#[test]
fn sparse_ct_reconstruction_returns_path_and_scores() {
    let kind = PhantomKind::Ellipses;
    let pair = gen_phantom(kind, 32, 1, &PhantomOptions::for_kind(kind)).unwrap();
    let settings = Settings {
        angles: 12,
        span: 180.0,
        noise: 0.02,
        alpha: 4.0,
        beta: 80.0,
    };
    let r = reconstruct(&pair.reference, &pair.target, &settings).unwrap();
    assert!(r.path.frames().len() >= 2);
    assert_eq!(r.path.frames().last().unwrap(), &pair.reference);
    assert!(r.scores.iter().all(|s| s.is_finite()));
    assert!(r.scores[0] > 0.0 && r.scores[0] <= 1.0);
    assert!(r.scores[2] > 0.0 && r.scores[2] <= 1.0);
}
