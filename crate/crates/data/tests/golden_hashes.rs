//! Pinned self-oracle hashes for the stochastic augmentation strategies:
//! any change to sampling order, op math, or constants shows up here.

use instcal_data::augment::{AugMixStyle, Augmentor, NetPerturb};
use instcal_data::scenes::{generate_scene, Palette};
use sha2::{Digest, Sha256};

fn image_hash(t: &instcal_core::Tensor) -> String {
    let mut h = Sha256::new();
    for v in &t.data {
        h.update(v.to_le_bytes());
    }
    let d = h.finalize();
    d[..12].iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn scene_generator_golden() {
    let s = generate_scene(2024, (2, 5), &Palette::default());
    assert_eq!(image_hash(&s.image), "f5b1f5cdbfd3e7390202e8a5");
    let mask_sum: u64 = s.mask.data.iter().map(|&v| v as u64).sum();
    assert_eq!(mask_sum, 1799);
}

#[test]
fn augmix_golden() {
    let s = generate_scene(2024, (2, 5), &Palette::default());
    let (img, _) = AugMixStyle::default().apply(&s.image, &s.mask, 11);
    assert_eq!(image_hash(&img), "9d41372efaa01c2764637e8e");
}

#[test]
fn netperturb_golden() {
    let s = generate_scene(2024, (2, 5), &Palette::default());
    let (img, _) = NetPerturb.apply(&s.image, &s.mask, 11);
    assert_eq!(image_hash(&img), "bd16ac8472f76c2255450153");
}
